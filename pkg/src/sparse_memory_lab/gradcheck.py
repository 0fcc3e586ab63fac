"""Standard finite-difference battery over the shipped layer configurations.

Each scenario pairs a deterministic scalar loss with every trainable
parameter it touches; the checker compares backprop against central
differences coordinate by coordinate.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .autodiff import Tensor
from .config import AltUpConfig, ExperimentConfig, MemoryConfig, ModelConfig, TrainingConfig
from .lookup import MemoryTable, SoftmaxRouterParams, TokenContext, memory_augmented_forward
from .model import LanguageModel
from .nn import GradCheckReport, finite_diff_check

GRADCHECK_COLUMNS = ("check", "max_rel_error", "epsilon", "passed")

Scenario = tuple[str, Callable[[], Tensor], dict[str, Tensor]]


def memory_softmax_scenario(seed: int = 7) -> Scenario:
    """Memory-augmented layer, softmax routing: d=8, n=4 experts of rank 2, k=2."""
    d, n, rank, k = 8, 4, 2, 2
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal(d))
    layer_w = Tensor(rng.standard_normal((d, d)) / math.sqrt(d), requires_grad=True)
    router = SoftmaxRouterParams.init(n, d, k, seed + 1)
    table = MemoryTable.init(n, d, rank, seed + 2)
    params: dict[str, Tensor] = {"layer_w": layer_w, "router_W": router.W}
    params.update(table.parameters())

    def loss_fn() -> Tensor:
        y = memory_augmented_forward(lambda v: layer_w @ v, x,
                                     TokenContext(1), router, table)
        return (y * y).sum()

    return "memory_augmented_softmax_d8_n4_rank2", loss_fn, params


def _lm_scenario(name: str, config: ExperimentConfig, window_seed: int = 3) -> Scenario:
    config.validate()
    model = LanguageModel.build(config)
    rng = np.random.default_rng(window_seed)
    window = rng.integers(0, config.model.vocab, size=config.model.seq_len + 1)
    params = model.parameters()

    def loss_fn() -> Tensor:
        return model.sequence_loss(window)

    return name, loss_fn, params


def _tiny_config(consumption: str, variant: str = "simplified", K: int = 1) -> ExperimentConfig:
    return ExperimentConfig(
        model=ModelConfig(d=8, layers=2, heads=2, vocab=10, seq_len=4),
        memory=MemoryConfig(consumption=consumption),
        altup=AltUpConfig(K=K, variant=variant),
        training=TrainingConfig(seed=5),
    )


def altup_simplified_scenario() -> Scenario:
    return _lm_scenario("altup_simplified_stack_K2_d8_2layers",
                        _tiny_config("altup", "simplified", K=2))


def altup_full_scenario() -> Scenario:
    return _lm_scenario("altup_full_stack_K2_d8_2layers",
                        _tiny_config("altup", "full", K=2))


def sum_consumption_scenario() -> Scenario:
    return _lm_scenario("sum_consumption_d8_2layers", _tiny_config("sum"))


def standard_scenarios() -> list[Scenario]:
    return [
        memory_softmax_scenario(),
        altup_simplified_scenario(),
        altup_full_scenario(),
        sum_consumption_scenario(),
    ]


def run_gradcheck_battery(epsilon: float = 1e-5,
                          tolerance: float = 1e-4) -> list[dict]:
    rows = []
    for name, loss_fn, params in standard_scenarios():
        report: GradCheckReport = finite_diff_check(loss_fn, params,
                                                    epsilon=epsilon,
                                                    tolerance=tolerance)
        rows.append({
            "check": name,
            "max_rel_error": report.max_rel_error,
            "epsilon": epsilon,
            "passed": report.passed,
        })
    return rows

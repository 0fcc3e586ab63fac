"""Training harness: Markov-corpus next-token modeling, Adam/SGD, periodic
evaluation, deterministic metrics, checkpointing, and the lookup sweep.

Everything a run emits is reproducible byte-for-byte from the seed except
wall-clock speed, which goes to a separate sidecar file the determinism
contract does not cover.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, Tensor
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, format_config
from .lookup import partial_expert_param_count
from .markov import markov_entropy_rate, random_transition_matrix, sample_markov
from .model import LanguageModel, count_params
from .reporting import run_cells, write_csv


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class MetricsRow:
    step: int
    train_loss: float
    eval_loss: float
    eval_accuracy: float
    examples_per_sec: float
    embedding_params: int
    non_embedding_params: int


METRICS_COLUMNS = ("step", "train_loss", "eval_loss", "eval_accuracy",
                   "embedding_params", "non_embedding_params")


class AdamState:
    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, p in params.items():
            if p.grad is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * p.grad
            self.v[k] = b2 * self.v[k] + (1 - b2) * p.grad * p.grad
            p.data -= scale * self.m[k] / (np.sqrt(self.v[k]) + self.eps)


class SgdState:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.lr = lr

    def step(self, params: dict[str, Tensor]) -> None:
        for p in params.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad


def load_token_file(path: str | Path, vocab: int) -> np.ndarray:
    """Whitespace-separated token ids; values must lie in [0, vocab)."""
    tokens = np.loadtxt(path, dtype=np.int64).reshape(-1)
    if tokens.size == 0:
        raise ValueError(f"corpus file {path} holds no tokens")
    if tokens.min() < 0 or tokens.max() >= vocab:
        raise ValueError(f"corpus file {path} has ids outside [0, {vocab})")
    return tokens


class Trainer:
    """Owns one model, its corpus, and the optimizer; drives seeded steps."""

    def __init__(self, config: ExperimentConfig):
        config.validate()
        self.config = config
        tr = config.training
        seed = tr.seed
        if tr.corpus_file:
            stream = load_token_file(tr.corpus_file, config.model.vocab)
            if stream.size < tr.eval_tokens + config.model.seq_len + 1:
                raise ValueError("corpus file too short for the eval split")
            self.entropy_rate = float("nan")  # unknown for external corpora
            self.train_tokens = stream[: stream.size - tr.eval_tokens]
            self.eval_tokens = stream[stream.size - tr.eval_tokens:]
        else:
            transitions = random_transition_matrix(
                config.model.vocab,
                np.random.SeedSequence(entropy=seed, spawn_key=(10,)))
            self.entropy_rate = markov_entropy_rate(transitions)
            self.train_tokens = sample_markov(
                transitions, tr.corpus_length,
                np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
            self.eval_tokens = sample_markov(
                transitions, tr.eval_tokens,
                np.random.SeedSequence(entropy=seed, spawn_key=(12,)))
        self.model = LanguageModel.build(config)
        self.params = self.model.parameters()
        if tr.optimizer == "adam":
            self.opt = AdamState(self.params, tr.learning_rate)
        else:
            self.opt = SgdState(self.params, tr.learning_rate)
        self.batch_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(13,)))
        self.jitter_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(14,)))
        self.step_count = 0

    def sample_batch(self) -> np.ndarray:
        window = self.config.model.seq_len + 1
        max_start = len(self.train_tokens) - window
        starts = self.batch_rng.integers(0, max_start + 1, size=self.config.training.batch)
        return np.stack([self.train_tokens[s: s + window] for s in starts])

    def batch_loss(self, batch: np.ndarray, train_mode: bool) -> Tensor:
        total = None
        for row in batch:
            loss = self.model.sequence_loss(row, train_mode=train_mode,
                                            rng=self.jitter_rng if train_mode else None)
            total = loss if total is None else total + loss
        return total * (1.0 / batch.shape[0])

    def step(self, batch: np.ndarray | None = None) -> float:
        """One optimizer step; returns the training loss in nats/token."""
        if batch is None:
            batch = self.sample_batch()
        for p in self.params.values():
            p.zero_grad()
        try:
            loss = self.batch_loss(batch, train_mode=True)
            loss.backward()
        except NonFiniteError as exc:
            raise DivergenceError(
                f"training diverged at step {self.step_count}: {exc}") from exc
        self.opt.step(self.params)
        self.step_count += 1
        return float(loss.data)

    def evaluate(self) -> tuple[float, float, float]:
        """(loss, accuracy, loss stderr) on fixed held-out windows, jitter-free."""
        window = self.config.model.seq_len + 1
        count = max(1, len(self.eval_tokens) // window)
        token_losses = []
        correct = 0
        total = 0
        for i in range(count):
            chunk = self.eval_tokens[i * window: (i + 1) * window]
            if len(chunk) < window:
                break
            logits = self.model.forward(chunk[:-1])
            logprobs = logits.log_softmax(axis=1)
            picked = logprobs.gather_cols(chunk[1:])
            token_losses.extend((-picked.data).tolist())
            correct += int(np.sum(np.argmax(logits.data, axis=1) == chunk[1:]))
            total += window - 1
        losses = np.asarray(token_losses)
        stderr = float(losses.std(ddof=1) / math.sqrt(losses.size)) if losses.size > 1 else 0.0
        return float(losses.mean()), correct / total, stderr


def train_model(config: ExperimentConfig, out_dir: str | Path | None = None,
                ) -> tuple[list[MetricsRow], Trainer]:
    """Train one config to completion, emitting metrics CSV and a checkpoint."""
    trainer = Trainer(config)
    out = Path(out_dir if out_dir is not None else config.io.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emb, non_emb = count_params(trainer.model)
    interval = config.io.checkpoint_interval
    rows: list[MetricsRow] = []
    examples_done = 0
    t_start = time.perf_counter()
    for step in range(1, config.training.steps + 1):
        train_loss = trainer.step()
        examples_done += config.training.batch
        if step % interval == 0 or step == config.training.steps:
            eval_loss, eval_acc, _ = trainer.evaluate()
            elapsed = max(time.perf_counter() - t_start, 1e-9)
            rows.append(MetricsRow(
                step=step, train_loss=train_loss, eval_loss=eval_loss,
                eval_accuracy=eval_acc, examples_per_sec=examples_done / elapsed,
                embedding_params=emb, non_embedding_params=non_emb))
    write_csv(out / "metrics.csv", METRICS_COLUMNS, [
        {"step": r.step, "train_loss": r.train_loss, "eval_loss": r.eval_loss,
         "eval_accuracy": r.eval_accuracy, "embedding_params": r.embedding_params,
         "non_embedding_params": r.non_embedding_params}
        for r in rows
    ])
    # wall-clock speed is intentionally outside the deterministic CSV
    with open(out / "speed.txt", "w") as fh:
        final_speed = rows[-1].examples_per_sec if rows else 0.0
        fh.write(f"examples_per_sec {final_speed:.3f}\n")
    (out / "config.txt").write_text(format_config(config))
    save_checkpoint(out / "checkpoint.smlb",
                    {k: v.data for k, v in trainer.params.items()})
    return rows, trainer


BENCH_COLUMNS = ("lookup", "rank", "buckets", "added_params", "added_params_full",
                 "final_train_loss", "final_eval_loss", "final_eval_accuracy", "seed")


def run_lookup_benchmark(grid: list[tuple[str, int, int]],
                         base_config: ExperimentConfig,
                         out_dir: str | Path) -> list[dict]:
    """Train one model per (lookup, rank, buckets) cell; rows sorted by the key."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def run_cell(cell: tuple[str, int, int]) -> dict:
        kind, rank, buckets = cell
        cfg = copy.deepcopy(base_config)
        cfg.memory.lookup = kind
        cfg.memory.rank = rank
        cfg.memory.buckets = buckets
        cfg.validate()
        cell_dir = out / f"{kind}_r{rank}_b{buckets}"
        rows, trainer = train_model(cfg, cell_dir)
        comparison, full = partial_expert_param_count(
            rank, buckets if kind != "token_id" else cfg.model.vocab, cfg.model.d)
        last = rows[-1]
        return {
            "lookup": kind, "rank": rank, "buckets": buckets,
            "added_params": comparison, "added_params_full": full,
            "final_train_loss": last.train_loss, "final_eval_loss": last.eval_loss,
            "final_eval_accuracy": last.eval_accuracy,
            "seed": cfg.training.seed,
        }

    results = run_cells(run_cell, grid)
    results.sort(key=lambda r: (r["lookup"], r["rank"], r["buckets"]))
    write_csv(out / "route_bench.csv", BENCH_COLUMNS, results)
    return results

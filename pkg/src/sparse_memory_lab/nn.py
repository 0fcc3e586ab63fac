"""Expert parameterizations, a small pre-layernorm transformer block, and a
finite-difference gradient checker.

Everything here is float64; gradient checks at float32 tolerances are
meaningless, and the whole package inherits that choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor, concat, zero_grads


def as_seedseq(seed) -> np.random.SeedSequence:
    """Accept ints and SeedSequences interchangeably wherever seeds spawn."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def lecun_normal_init(shape: tuple[int, ...], seed, fan_in: int | None = None) -> Tensor:
    """Draw a trainable tensor with entries ~ Normal(0, 1/fan_in).

    fan_in defaults to the first dimension; pass it explicitly when the
    matrix contracts over a different axis.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ValueError(f"lecun_normal_init needs a nonempty shape, got {shape}")
    if fan_in is None:
        fan_in = shape[0]
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(shape) / math.sqrt(fan_in)
    return Tensor(data, requires_grad=True)


@dataclass
class TwoLayerExpertParams:
    """Rank-r feed-forward expert: x -> V @ relu(U^T @ x), U and V both d_in x rank."""

    U: Tensor
    V: Tensor

    def __post_init__(self) -> None:
        if self.U.shape != self.V.shape:
            raise ValueError(f"U and V must share a shape, got {self.U.shape} vs {self.V.shape}")
        if self.U.ndim != 2 or self.U.shape[1] < 1:
            raise ValueError("expert matrices must be d_in x rank with rank >= 1")

    @property
    def d_in(self) -> int:
        return self.U.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @classmethod
    def init(cls, d_in: int, rank: int, seed) -> "TwoLayerExpertParams":
        s_u, s_v = as_seedseq(seed).spawn(2)
        return cls(
            U=lecun_normal_init((d_in, rank), s_u, fan_in=d_in),
            V=lecun_normal_init((d_in, rank), s_v, fan_in=rank),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"U": self.U, "V": self.V}


@dataclass
class ConstantExpertParams:
    """Rank-0 expert: a constant vector added regardless of the input."""

    b: Tensor

    def __post_init__(self) -> None:
        if self.b.ndim != 1:
            raise ValueError("constant expert holds a 1-D vector")

    @property
    def d_in(self) -> int:
        return self.b.shape[0]

    @property
    def rank(self) -> int:
        return 0

    @classmethod
    def init(cls, d_in: int) -> "ConstantExpertParams":
        return cls(b=Tensor(np.zeros(d_in), requires_grad=True))

    def parameters(self) -> dict[str, Tensor]:
        return {"b": self.b}


ExpertParams = TwoLayerExpertParams | ConstantExpertParams


def apply_expert(x: Tensor, params: ExpertParams) -> Tensor:
    """Evaluate one partial expert on a single token vector."""
    if x.ndim != 1 or x.shape[0] != params.d_in:
        raise ValueError(f"expert expects a length-{params.d_in} vector, got shape {x.shape}")
    if isinstance(params, ConstantExpertParams):
        return params.b
    hidden = (params.U.T @ x).relu()
    return params.V @ hidden


@dataclass
class TransformerBlockParams:
    """Pre-layernorm block: x + Attn(LN(x)), then + FFN(LN(.)). ReLU FFN."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    w2: Tensor
    ln1_scale: Tensor
    ln1_bias: Tensor
    ln2_scale: Tensor
    ln2_bias: Tensor
    n_heads: int

    def __post_init__(self) -> None:
        d = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}")
        if self.w1.shape[0] != d or self.w2.shape[1] != d or self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError("feed-forward shapes inconsistent with model width")
        if d % self.n_heads != 0:
            raise ValueError(f"n_heads={self.n_heads} must divide d={d}")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def d_ff(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, d: int, n_heads: int, seed, d_ff: int | None = None) -> "TransformerBlockParams":
        if d_ff is None:
            d_ff = 4 * d
        seeds = as_seedseq(seed).spawn(6)
        return cls(
            wq=lecun_normal_init((d, d), seeds[0], fan_in=d),
            wk=lecun_normal_init((d, d), seeds[1], fan_in=d),
            wv=lecun_normal_init((d, d), seeds[2], fan_in=d),
            wo=lecun_normal_init((d, d), seeds[3], fan_in=d),
            w1=lecun_normal_init((d, d_ff), seeds[4], fan_in=d),
            w2=lecun_normal_init((d_ff, d), seeds[5], fan_in=d_ff),
            ln1_scale=Tensor(np.ones(d), requires_grad=True),
            ln1_bias=Tensor(np.zeros(d), requires_grad=True),
            ln2_scale=Tensor(np.ones(d), requires_grad=True),
            ln2_bias=Tensor(np.zeros(d), requires_grad=True),
            n_heads=n_heads,
        )

    def parameters(self) -> dict[str, Tensor]:
        return {
            "wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo,
            "w1": self.w1, "w2": self.w2,
            "ln1_scale": self.ln1_scale, "ln1_bias": self.ln1_bias,
            "ln2_scale": self.ln2_scale, "ln2_bias": self.ln2_bias,
        }


_NEG_MASK = -1e30  # additive attention mask; exp() underflows to exactly 0


def transformer_block_forward(x: Tensor, params: TransformerBlockParams,
                              causal: bool = False) -> Tensor:
    """Run one block on a (seq, d) tensor; deterministic given params."""
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ValueError(f"block expects (seq, {params.d}), got {x.shape}")
    seq, d = x.shape
    h = params.n_heads
    dh = d // h

    ln1 = x.normalize() * params.ln1_scale + params.ln1_bias
    q = ln1 @ params.wq
    k = ln1 @ params.wk
    v = ln1 @ params.wv

    mask = None
    if causal and seq > 1:
        mask = np.triu(np.full((seq, seq), _NEG_MASK), k=1)

    head_outs = []
    scale = 1.0 / math.sqrt(dh)
    for i in range(h):
        qi = q.narrow(1, i * dh, dh)
        ki = k.narrow(1, i * dh, dh)
        vi = v.narrow(1, i * dh, dh)
        scores = (qi @ ki.T) * scale
        if mask is not None:
            scores = scores + mask
        attn = scores.softmax(axis=1)
        head_outs.append(attn @ vi)
    attended = concat(head_outs, axis=1) if h > 1 else head_outs[0]
    x = x + attended @ params.wo

    ln2 = x.normalize() * params.ln2_scale + params.ln2_bias
    ffn = (ln2 @ params.w1).relu() @ params.w2
    return x + ffn


def transformer_block_multiplies(d: int, seq_len: int, d_ff: int | None = None) -> int:
    """Per-token multiply count of one block: projections, scores/mix, FFN."""
    if d_ff is None:
        d_ff = 4 * d
    return 4 * d * d + 2 * seq_len * d + 2 * d * d_ff


@dataclass
class GradCheckReport:
    """Outcome of a central-difference gradient check."""

    per_param: dict[str, float]
    epsilon: float
    tolerance: float
    max_rel_error: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.max_rel_error = max(self.per_param.values()) if self.per_param else 0.0
        self.passed = self.max_rel_error < self.tolerance


def finite_diff_check(loss_fn: Callable[[], Tensor],
                      params: Mapping[str, Tensor],
                      epsilon: float = 1e-5,
                      tolerance: float = 1e-4) -> GradCheckReport:
    """Compare backprop gradients against central differences.

    loss_fn must rebuild its graph from the current parameter values on every
    call and return a scalar. Relative errors use the denominator
    max(|analytic|, |numeric|, 1e-12).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    tensors = dict(params)
    zero_grads(tensors.values())
    loss = loss_fn()
    if loss.size != 1:
        raise ValueError("loss_fn must return a scalar tensor")
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
    }

    per_param: dict[str, float] = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = float(loss_fn().data)
            flat[i] = orig - epsilon
            lm = float(loss_fn().data)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * epsilon)
            denom = max(abs(grad_flat[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(grad_flat[i] - numeric) / denom)
        per_param[name] = worst

    return GradCheckReport(per_param=per_param, epsilon=epsilon, tolerance=tolerance)

"""Sparse table lookups: token-id, learnable softmax routing, hyperplane and
spherical LSH, min-hash, and the memory-augmented layer that consumes them.

Lookup parameters are immutable after construction and safe to share across
threads; the softmax router's jitter draws come from a caller-supplied
generator so batch-parallel evaluation stays deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .autodiff import Tensor
from .nn import ConstantExpertParams, ExpertParams, TwoLayerExpertParams, apply_expert, as_seedseq


@dataclass(frozen=True)
class TokenContext:
    """Vocabulary index of the original token, carried alongside the vector."""

    id: int

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"token id must be nonnegative, got {self.id}")


@dataclass
class MemoryTable:
    """External table of n expert parameter records, all of one kind."""

    entries: list[ExpertParams]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("memory table needs at least one entry")
        kinds = {type(e) for e in self.entries}
        if len(kinds) > 1:
            raise ValueError("memory table entries must all be of one kind")
        d_ins = {e.d_in for e in self.entries}
        ranks = {e.rank for e in self.entries}
        if len(d_ins) > 1 or len(ranks) > 1:
            raise ValueError("memory table entries must share d_in and rank")

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def d_in(self) -> int:
        return self.entries[0].d_in

    @property
    def rank(self) -> int:
        return self.entries[0].rank

    @classmethod
    def init(cls, n: int, d_in: int, rank: int, seed) -> "MemoryTable":
        """rank >= 1 builds two-layer experts; rank 0 builds constant vectors."""
        if rank > 0:
            seeds = as_seedseq(seed).spawn(n)
            entries: list[ExpertParams] = [
                TwoLayerExpertParams.init(d_in, rank, s) for s in seeds
            ]
        else:
            entries = [ConstantExpertParams.init(d_in) for _ in range(n)]
        return cls(entries=entries)

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, e in enumerate(self.entries):
            for name, t in e.parameters().items():
                out[f"expert{i}_{name}"] = t
        return out


@dataclass(frozen=True)
class RouteResult:
    """Selected table indices and their weights (a length-matched tensor)."""

    indices: tuple[int, ...]
    weights: Tensor

    def __post_init__(self) -> None:
        if len(self.indices) != self.weights.shape[0]:
            raise ValueError("indices and weights must have equal length")


def _unit_weights(count: int = 1) -> Tensor:
    return Tensor(np.ones(count))


def token_id_lookup(ctx: TokenContext, n: int) -> RouteResult:
    """Route by vocabulary index; the table size must equal the vocabulary size."""
    if ctx.id >= n:
        raise ValueError(f"token id {ctx.id} out of vocabulary for table size {n}")
    return RouteResult(indices=(ctx.id,), weights=_unit_weights())


@dataclass
class SoftmaxRouterParams:
    """Learnable router: logits h = W x, probabilities softmax(h), top-k selection."""

    W: Tensor
    k: int
    jitter_epsilon: float = 0.01

    def __post_init__(self) -> None:
        if self.W.ndim != 2:
            raise ValueError("router weight must be n x d_in")
        if not (1 <= self.k <= self.W.shape[0]):
            raise ValueError(f"k={self.k} outside [1, n={self.W.shape[0]}]")
        if self.jitter_epsilon < 0:
            raise ValueError("jitter_epsilon must be nonnegative")

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, n: int, d_in: int, k: int, seed, std: float = 2e-2,
             jitter_epsilon: float = 0.01) -> "SoftmaxRouterParams":
        rng = np.random.default_rng(seed)
        w = Tensor(rng.standard_normal((n, d_in)) * std, requires_grad=True)
        return cls(W=w, k=k, jitter_epsilon=jitter_epsilon)

    def parameters(self) -> dict[str, Tensor]:
        return {"W": self.W}


def softmax_route(x: Tensor, params: SoftmaxRouterParams, train_mode: bool = False,
                  rng: np.random.Generator | None = None) -> RouteResult:
    """Top-k probability routing; ties break toward the lower index.

    In train mode the routing input is multiplied elementwise by jitter drawn
    uniformly from [1-eps, 1+eps]; evaluation is jitter-free. Weights are the
    selected probabilities, so gradients reach W through the weighting.
    """
    if x.ndim != 1 or x.shape[0] != params.d_in:
        raise ValueError(f"router expects a length-{params.d_in} vector, got {x.shape}")
    if params.k > params.n:
        raise ValueError("k exceeds table size")
    routed_x = x
    if train_mode and params.jitter_epsilon > 0:
        if rng is None:
            raise ValueError("train-mode jitter needs a random generator")
        eps = params.jitter_epsilon
        routed_x = x * rng.uniform(1.0 - eps, 1.0 + eps, size=x.shape)
    logits = params.W @ routed_x
    probs = logits.softmax(axis=-1)
    order = np.argsort(-probs.data, kind="stable")
    top = tuple(int(i) for i in order[: params.k])
    return RouteResult(indices=top, weights=probs.take(list(top)))


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_MIX_A = np.uint64(0x9E3779B97F4A7C15)
_MIX_B = np.uint64(0xBF58476D1CE4E5B9)
_MIX_C = np.uint64(0x94D049BB133111EB)


def fold_cells(cells: np.ndarray, seed: int) -> np.ndarray:
    """Reduce integer cell tuples (..., k) to 64-bit bucket hashes.

    Splitmix-style mixing folded left to right; trailing axis is the tuple.
    The same function serves the scalar lookup op and the vectorized
    collision simulation, so the two routes share bucket math exactly.
    """
    cells = np.asarray(cells, dtype=np.int64)
    state = np.full(cells.shape[:-1], np.uint64(seed), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(cells.shape[-1]):
            z = (state ^ cells[..., j].astype(np.uint64)) + _MIX_A
            z &= _MASK64
            z = ((z ^ (z >> np.uint64(30))) * _MIX_B) & _MASK64
            z = ((z ^ (z >> np.uint64(27))) * _MIX_C) & _MASK64
            state = z ^ (z >> np.uint64(31))
    return state


@dataclass
class HyperplaneLshParams:
    """Grid partition by random equispaced hyperplanes; frozen after construction."""

    directions: np.ndarray  # (num_projections, d_in), i.i.d. standard normal
    offsets: np.ndarray     # (num_projections,), uniform in [0, width)
    width: float
    n: int
    mix_seed: int = 0x5EED

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError("bucket width must be positive")
        if self.n < 1:
            raise ValueError("table size must be at least 1")
        if self.directions.ndim != 2 or self.offsets.shape != (self.directions.shape[0],):
            raise ValueError("directions must be (k, d) with matching offsets")
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.directions.setflags(write=False)
        self.offsets.setflags(write=False)

    @property
    def num_projections(self) -> int:
        return self.directions.shape[0]

    @property
    def d_in(self) -> int:
        return self.directions.shape[1]

    @classmethod
    def init(cls, d_in: int, num_projections: int, width: float, n: int,
             seed) -> "HyperplaneLshParams":
        rng = np.random.default_rng(seed)
        return cls(
            directions=rng.standard_normal((num_projections, d_in)),
            offsets=rng.uniform(0.0, width, num_projections),
            width=width,
            n=n,
        )


def hyperplane_lsh_lookup(x, params: HyperplaneLshParams) -> RouteResult:
    """Bucket = mixed hash of the per-projection grid cells, mod n."""
    vec = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if vec.shape != (params.d_in,):
        raise ValueError(f"expected a length-{params.d_in} vector, got {vec.shape}")
    cells = np.floor((params.directions @ vec + params.offsets) / params.width).astype(np.int64)
    bucket = int(fold_cells(cells, params.mix_seed) % np.uint64(params.n))
    return RouteResult(indices=(bucket,), weights=_unit_weights())


@dataclass
class SphericalLshParams:
    """Nearest-anchor (Voronoi on the sphere) hashing with random unit anchors."""

    anchors: np.ndarray  # (n, d_in), unit rows

    def __post_init__(self) -> None:
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        if self.anchors.ndim != 2:
            raise ValueError("anchors must be (n, d)")
        norms = np.linalg.norm(self.anchors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("anchors must have unit 2-norm within 1e-9")
        self.anchors.setflags(write=False)

    @property
    def n(self) -> int:
        return self.anchors.shape[0]

    @property
    def d_in(self) -> int:
        return self.anchors.shape[1]

    @classmethod
    def init(cls, n: int, d_in: int, seed) -> "SphericalLshParams":
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((n, d_in))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        return cls(anchors=a)


def spherical_lsh_lookup(x, params: SphericalLshParams) -> RouteResult:
    """Bucket = argmax anchor dot with x/||x||; ties go to the lower index."""
    vec = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if vec.shape != (params.d_in,):
        raise ValueError(f"expected a length-{params.d_in} vector, got {vec.shape}")
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ValueError("spherical lookup is undefined for the zero vector")
    bucket = int(np.argmax(params.anchors @ (vec / norm)))
    return RouteResult(indices=(bucket,), weights=_unit_weights())


@dataclass
class MinHashParams:
    """Seeded random ranking of the token universe; hashes sets by their min-rank element."""

    ranks: np.ndarray  # permutation of [0, universe)
    n: int

    def __post_init__(self) -> None:
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        if sorted(self.ranks.tolist()) != list(range(self.ranks.size)):
            raise ValueError("ranks must be a bijection on the universe")
        if self.n < 1:
            raise ValueError("table size must be at least 1")
        self.ranks.setflags(write=False)

    @property
    def universe(self) -> int:
        return self.ranks.size

    @classmethod
    def init(cls, universe: int, n: int, seed) -> "MinHashParams":
        rng = np.random.default_rng(seed)
        return cls(ranks=rng.permutation(universe), n=n)


def minhash_lookup(token_set: Iterable[int], params: MinHashParams) -> RouteResult:
    """Bucket = (set element with minimal rank) mod n."""
    elems = list(token_set)
    if not elems:
        raise ValueError("minhash lookup needs a nonempty set")
    if any(e < 0 or e >= params.universe for e in elems):
        raise ValueError("set element outside the token universe")
    winner = min(elems, key=lambda e: params.ranks[e])
    return RouteResult(indices=(winner % params.n,), weights=_unit_weights())


@dataclass(frozen=True)
class TokenIdLookup:
    """Marker params for token-id routing: the table size is the vocabulary size."""

    n: int


LookupParams = (
    TokenIdLookup | SoftmaxRouterParams | HyperplaneLshParams
    | SphericalLshParams | MinHashParams
)


def route(x: Tensor, ctx: TokenContext, lookup: LookupParams,
          train_mode: bool = False,
          rng: np.random.Generator | None = None) -> RouteResult:
    """Dispatch (x, id) to table indices for any lookup kind."""
    if isinstance(lookup, TokenIdLookup):
        return token_id_lookup(ctx, lookup.n)
    if isinstance(lookup, SoftmaxRouterParams):
        return softmax_route(x, lookup, train_mode=train_mode, rng=rng)
    if isinstance(lookup, HyperplaneLshParams):
        return hyperplane_lsh_lookup(x, lookup)
    if isinstance(lookup, SphericalLshParams):
        return spherical_lsh_lookup(x, lookup)
    if isinstance(lookup, MinHashParams):
        return minhash_lookup({ctx.id}, lookup)
    raise ValueError(f"unknown lookup kind: {type(lookup).__name__}")


def memory_augmented_forward(layer: Callable[[Tensor], Tensor], x: Tensor,
                             ctx: TokenContext, lookup: LookupParams,
                             table: MemoryTable, train_mode: bool = False,
                             rng: np.random.Generator | None = None) -> Tensor:
    """L(x) plus the weighted sum of selected partial experts on x."""
    result = route(x, ctx, lookup, train_mode=train_mode, rng=rng)
    out = layer(x)
    for pos, idx in enumerate(result.indices):
        if idx >= table.n:
            raise ValueError(f"routed index {idx} outside table of size {table.n}")
        w = result.weights.narrow(0, pos, 1)
        out = out + w * apply_expert(x, table.entries[idx])
    return out


def partial_expert_param_count(rank: int, buckets: int, d_in: int) -> tuple[int, int]:
    """(comparison count, full count) added by a table of partial experts.

    The comparison count max{2*rank, 1} * buckets drops the universal d_in
    factor; the full count multiplies it back in. Rank 0 stores one constant
    vector per bucket.
    """
    if rank < 0 or buckets < 1 or d_in < 1:
        raise ValueError("need rank >= 0, buckets >= 1, d_in >= 1")
    comparison = max(2 * rank, 1) * buckets
    return comparison, comparison * d_in

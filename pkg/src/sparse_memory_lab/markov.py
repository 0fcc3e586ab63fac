"""Order-1 Markov token streams with an analytically known entropy rate.

The training corpus stands in for real text: a perfect next-token model's
cross-entropy converges to the chain's entropy rate, which gives every run
an absolute quality floor to compare against.
"""

from __future__ import annotations

import numpy as np


def random_transition_matrix(num_symbols: int, seed, concentration: float = 0.5) -> np.ndarray:
    """Row-stochastic matrix with Dirichlet(concentration) rows."""
    if num_symbols < 2:
        raise ValueError("need at least two symbols")
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    rng = np.random.default_rng(seed)
    raw = rng.gamma(concentration, size=(num_symbols, num_symbols))
    raw = np.maximum(raw, 1e-300)
    return raw / raw.sum(axis=1, keepdims=True)


def _validate_transitions(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError("transition matrix must be square")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ValueError("transition rows must be finite and nonnegative")
    sums = m.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ValueError("degenerate transition rows: rows must sum to 1")
    return m


def stationary_distribution(matrix: np.ndarray, tol: float = 1e-14,
                            max_iters: int = 100000) -> np.ndarray:
    """Fixed point of pi = pi P by power iteration from uniform."""
    m = _validate_transitions(matrix)
    n = m.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        nxt = pi @ m
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt / nxt.sum()
        pi = nxt
    return pi / pi.sum()


def markov_entropy_rate(matrix: np.ndarray) -> float:
    """Per-token entropy (nats) under the stationary distribution."""
    m = _validate_transitions(matrix)
    pi = stationary_distribution(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(m > 0, m * np.log(m), 0.0)
    return float(-np.sum(pi * plogp.sum(axis=1)))


def sample_markov(matrix: np.ndarray, length: int, seed) -> np.ndarray:
    """Sample a chain of the given length, starting from the stationary law."""
    if length < 1:
        raise ValueError("length must be at least 1")
    m = _validate_transitions(matrix)
    rng = np.random.default_rng(seed)
    cumulative = np.cumsum(m, axis=1)
    cumulative[:, -1] = 1.0
    pi = stationary_distribution(m)
    tokens = np.empty(length, dtype=np.int64)
    state = int(rng.choice(m.shape[0], p=pi / pi.sum()))
    tokens[0] = state
    draws = rng.random(length - 1)
    for i in range(1, length):
        state = int(np.searchsorted(cumulative[state], draws[i - 1], side="right"))
        tokens[i] = state
    return tokens


def generate_markov_corpus(num_symbols: int, transition_seed, length: int,
                           corpus_seed) -> tuple[np.ndarray, float]:
    """Token stream plus the chain's exact entropy rate in nats per token."""
    matrix = random_transition_matrix(num_symbols, transition_seed)
    tokens = sample_markov(matrix, length, corpus_seed)
    return tokens, markov_entropy_rate(matrix)

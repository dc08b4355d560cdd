"""Brute-force reference computations, written independently of the package.

Everything here works directly from the definitions with plain loops so it
can check the vectorized code paths.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def remaining_brute(rows: np.ndarray, blank: int) -> list[float]:
    """Double sum over later frames and non-blank tokens of the emission probability."""
    frames, vocab = rows.shape

    def p(t: int, y: int) -> float:
        # 1-based frames; frame 0 is all blank
        if t == 0:
            return 1.0 if y == blank else 0.0
        return float(rows[t - 1, y])

    out = []
    for t in range(frames + 1):
        total = 0.0
        for tau in range(1, frames - t + 1):
            for y in range(vocab):
                if y != blank:
                    total += (1.0 - p(t + tau - 1, y)) * p(t + tau, y)
        out.append(total)
    return out


def back_jump_brute(current: np.ndarray, previous: np.ndarray) -> float:
    frames = len(current)
    total = 0.0
    for t in range(1, frames + 1):
        behind = 0.0
        for tau in range(1, frames - t + 1):
            behind += previous[t + tau - 1]
        total += current[t - 1] * behind
    return total


def collapse(path: tuple[int, ...], blank: int) -> list[int]:
    out = []
    prev = None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return out


def ctc_prefix_brute(prefix: list[int], rows: np.ndarray, blank: int) -> float:
    """Log of the total probability of alignments whose labeling starts with ``prefix``."""
    frames, vocab = rows.shape
    total = 0.0
    for path in itertools.product(range(vocab), repeat=frames):
        if collapse(path, blank)[: len(prefix)] == list(prefix):
            total += math.prod(rows[t, s] for t, s in enumerate(path))
    return math.log(total) if total > 0 else -math.inf


def random_posterior(rng: np.random.Generator, frames: int, vocab: int, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(vocab, concentration), size=frames)


def random_distribution(rng: np.random.Generator, frames: int, sparse: bool = False) -> np.ndarray:
    weights = rng.dirichlet(np.full(frames, 0.3 if sparse else 1.0))
    return weights / weights.sum()

"""Running-stitch endpoint prediction from CTC posteriors.

The decoder stops consuming the current blocks once the attention-weighted
expectation of tokens still to be emitted after the attended frame drops
below a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from stitchdec.errors import ContractViolation

ROW_SUM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class CtcPosteriorBlock:
    """Per-frame CTC posteriors for frames ``1..T_b``.

    ``rows[t - 1]`` holds the distribution of frame ``t`` over the full
    vocabulary, blank included.
    """

    rows: np.ndarray
    blank_id: int

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ContractViolation(f"posterior must be a non-empty T x V matrix, got {rows.shape}")
        if not 0 <= self.blank_id < rows.shape[1]:
            raise ContractViolation(f"blank_id {self.blank_id} outside [0, {rows.shape[1]})")
        if np.any(rows < 0.0) or np.any(rows > 1.0):
            raise ContractViolation("posterior entries must lie in [0, 1]")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ContractViolation("posterior rows must sum to 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def frames(self) -> int:
        return self.rows.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[1]

    @cached_property
    def log_rows(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.rows)

    @cached_property
    def profile(self) -> "EmissionProfile":
        emission = token_emission(self)
        return EmissionProfile(emission, remaining_tokens(emission, self.blank_id))


@dataclass(frozen=True, eq=False)
class EmissionProfile:
    emission: np.ndarray
    remaining: np.ndarray


def token_emission(posterior: CtcPosteriorBlock) -> np.ndarray:
    """Probability that each token is freshly emitted at each frame.

    Entry ``(t, y)`` is ``(1 - p_{t-1}(y)) * p_t(y)``; a repeated label on
    consecutive frames collapses, so only the transition into ``y`` counts.
    Frame 0 is a virtual all-blank frame.
    """
    rows = posterior.rows
    previous = np.zeros_like(rows)
    previous[0, posterior.blank_id] = 1.0
    previous[1:] = rows[:-1]
    return (1.0 - previous) * rows


def remaining_tokens(emission: np.ndarray, blank_id: int) -> np.ndarray:
    """Expected number of non-blank tokens emitted strictly after frame ``t``.

    Returns a vector of length ``T_b + 1`` indexed by ``t = 0..T_b``;
    ``remaining[T_b]`` is always zero.
    """
    per_frame = emission.sum(axis=1) - emission[:, blank_id]
    remaining = np.zeros(emission.shape[0] + 1)
    # suffix sum: remaining[t] = per_frame[t] + ... + per_frame[T_b - 1]
    remaining[:-1] = np.cumsum(per_frame[::-1])[::-1]
    return remaining


def expected_remaining(remaining: np.ndarray, attention: np.ndarray) -> float:
    """Attention-weighted expectation of the remaining token count.

    ``attention`` covers frames ``1..T_b`` and is matched against
    ``remaining[1:]``; the virtual frame 0 is never attended.
    """
    attention = np.asarray(attention, dtype=np.float64)
    if attention.shape[0] != remaining.shape[0] - 1:
        raise ContractViolation(
            f"attention covers {attention.shape[0]} frames but the profile covers "
            f"{remaining.shape[0] - 1}"
        )
    if abs(attention.sum() - 1.0) > ROW_SUM_TOL:
        raise ContractViolation("attention weights must sum to 1")
    return max(float(attention @ remaining[1:]), 0.0)


def endpoint_reached(expectation: float, nu: float) -> bool:
    return expectation < nu

"""Source-target attention bookkeeping and back-jump detection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from stitchdec.errors import ContractViolation

if TYPE_CHECKING:
    from stitchdec.search import Hypothesis

WEIGHT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class AttentionSnapshot:
    """Last-layer attention of one decode step over frames ``1..T_b``."""

    step_index: int
    block_index: int
    per_head: np.ndarray
    averaged: np.ndarray

    @classmethod
    def from_heads(cls, step_index: int, block_index: int, per_head: np.ndarray) -> "AttentionSnapshot":
        per_head = np.asarray(per_head, dtype=np.float64)
        if per_head.ndim != 2:
            raise ContractViolation("per-head attention must be an M x T_b matrix")
        if np.any(np.abs(per_head.sum(axis=1) - 1.0) > WEIGHT_TOL):
            raise ContractViolation("each attention head must sum to 1")
        averaged = average_heads(per_head)
        per_head.setflags(write=False)
        averaged.setflags(write=False)
        return cls(step_index, block_index, per_head, averaged)

    @property
    def frames(self) -> int:
        return self.averaged.shape[0]

    @property
    def peak(self) -> int:
        """1-based frame with the largest averaged weight."""
        return int(np.argmax(self.averaged)) + 1


@dataclass(frozen=True)
class BackJumpDecision:
    probability: float
    triggered: bool
    threshold: float


def average_heads(per_head: np.ndarray) -> np.ndarray:
    """Mean of the per-head attention distributions.

    The heads are averaged rather than summed so the result stays a
    distribution over frames.
    """
    per_head = np.asarray(per_head, dtype=np.float64)
    if per_head.ndim != 2 or per_head.shape[0] == 0:
        raise ContractViolation("need at least one attention head")
    return per_head.mean(axis=0)


def pad_to(weights: np.ndarray, frames: int) -> np.ndarray:
    """Zero-pad attention computed under a smaller block to ``frames``."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] > frames:
        raise ContractViolation(
            f"cannot pad attention over {weights.shape[0]} frames down to {frames}"
        )
    if weights.shape[0] == frames:
        return weights
    return np.concatenate([weights, np.zeros(frames - weights.shape[0])])


def back_jump_probability(current: np.ndarray, previous: np.ndarray, frames: Optional[int] = None) -> float:
    """Probability that the current attention sits behind the previous one.

    Computes ``sum_t a_i(t) * sum_{tau >= 1} a_{i-1}(t + tau)``, i.e. the mass
    of the previous step's attention lying strictly after each frame the
    current step attends to.
    """
    current = np.asarray(current, dtype=np.float64)
    if frames is None:
        frames = current.shape[0]
    if current.shape[0] != frames:
        raise ContractViolation(
            f"current attention covers {current.shape[0]} frames, expected {frames}"
        )
    previous = pad_to(previous, frames)
    ahead = np.zeros(frames)
    # ahead[t] = previous[t+1] + ... + previous[T_b - 1]  (0-based)
    ahead[:-1] = np.cumsum(previous[::-1])[::-1][1:]
    return float(np.clip(current @ ahead, 0.0, 1.0))


def detect_back_stitch(hypothesis: "Hypothesis", upsilon: float, eos_id: int) -> BackJumpDecision:
    """Decide whether ``hypothesis`` ran past the endpoint of the current blocks.

    Used only while more blocks are still to come, where an ``eos`` can only
    mean the decoder outran the encoder.
    """
    probability = 0.0
    if hypothesis.last_attention is not None and hypothesis.prev_attention is not None:
        current = hypothesis.last_attention.averaged
        probability = back_jump_probability(current, hypothesis.prev_attention.averaged, current.shape[0])
    triggered = hypothesis.tokens[-1] == eos_id or probability > upsilon
    return BackJumpDecision(probability, triggered, upsilon)

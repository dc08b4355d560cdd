"""Arrival model for encoder output blocks.

Blocks arrive at an idealized real-time cadence: block ``b`` is available at
``T_b * frame_shift`` milliseconds, where ``T_b`` is the number of encoded
frames covered by the first ``b`` blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from stitchdec.errors import ContractViolation, UtteranceExhausted

DEFAULT_FRAME_SHIFT_MS = 40.0


@dataclass(frozen=True)
class BlockSchedule:
    frames_per_block: int
    total_blocks: int
    last_block_frames: int
    frame_shift: float = DEFAULT_FRAME_SHIFT_MS

    def __post_init__(self) -> None:
        if self.frames_per_block < 1:
            raise ContractViolation("frames_per_block must be positive")
        if self.total_blocks < 1:
            raise ContractViolation("total_blocks must be positive")
        if not 1 <= self.last_block_frames <= self.frames_per_block:
            raise ContractViolation(
                f"last_block_frames must lie in [1, {self.frames_per_block}], "
                f"got {self.last_block_frames}"
            )
        if self.frame_shift <= 0:
            raise ContractViolation("frame_shift must be positive")

    @classmethod
    def from_frames(
        cls,
        num_frames: int,
        frames_per_block: int,
        frame_shift: float = DEFAULT_FRAME_SHIFT_MS,
    ) -> "BlockSchedule":
        """Split ``num_frames`` encoded frames into blocks of ``frames_per_block``."""
        if num_frames < 1:
            raise ContractViolation("an utterance needs at least one frame")
        if frames_per_block < 1:
            raise ContractViolation("frames_per_block must be positive")
        total, rest = divmod(num_frames, frames_per_block)
        if rest:
            total += 1
        else:
            rest = frames_per_block
        return cls(frames_per_block, total, rest, frame_shift)

    @property
    def total_frames(self) -> int:
        return (self.total_blocks - 1) * self.frames_per_block + self.last_block_frames

    def frames_through(self, block: int) -> int:
        """``T_b``: number of frames available once ``block`` has arrived."""
        if not 1 <= block <= self.total_blocks:
            raise ContractViolation(f"block {block} outside [1, {self.total_blocks}]")
        if block == self.total_blocks:
            return self.total_frames
        return block * self.frames_per_block

    def arrival_time(self, block: int) -> float:
        return self.frames_through(block) * self.frame_shift

    def block_of(self, frame: int) -> int:
        """Index of the block that contains 1-based ``frame``."""
        if not 1 <= frame <= self.total_frames:
            raise ContractViolation(f"frame {frame} outside [1, {self.total_frames}]")
        return min((frame - 1) // self.frames_per_block + 1, self.total_blocks)

    def view(self, block: int) -> "EncoderBlockView":
        return EncoderBlockView(block, (1, self.frames_through(block)))


@dataclass(frozen=True)
class EncoderBlockView:
    """Frames ``1..T_b`` visible to the decoder after ``block_index`` blocks.

    ``frame_range`` is inclusive on both ends, 1-based. ``posterior`` is
    attached by the decoder once the scorer has produced it.
    """

    block_index: int
    frame_range: tuple[int, int]
    posterior: Optional[object] = None

    @property
    def frames(self) -> int:
        return self.frame_range[1]


def advance(schedule: BlockSchedule, current_block: int) -> EncoderBlockView:
    """Return the view for the block after ``current_block``.

    Raises:
      UtteranceExhausted: if ``current_block`` is already the final block.
    """
    if current_block >= schedule.total_blocks:
        raise UtteranceExhausted("utterance exhausted")
    return schedule.view(current_block + 1)


def utterance_end_time(schedule: BlockSchedule) -> float:
    """Simulated time (ms) at which the last encoded frame is available."""
    return schedule.total_frames * schedule.frame_shift

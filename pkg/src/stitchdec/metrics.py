"""Simulated-clock latency accounting.

Every decode produces a :class:`DecodeTimeline`. Reports aggregate them into
EP latency percentiles, real-time factor, the mean number of decode steps
run on the full utterance ("last steps") and discard counts.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from stitchdec.errors import ContractViolation

BLOCK_ARRIVAL = "block_arrival"
STEP_COMMITTED = "step_committed"
STEP_DISCARDED = "step_discarded"
EOS_EMITTED = "eos_emitted"
UTTERANCE_END = "utterance_end"

EVENT_KINDS = (BLOCK_ARRIVAL, STEP_COMMITTED, STEP_DISCARDED, EOS_EMITTED, UTTERANCE_END)
# same-time ordering: the feed is observed before the decoder reacts to it
_KIND_ORDER = {BLOCK_ARRIVAL: 0, UTTERANCE_END: 1, STEP_DISCARDED: 2, STEP_COMMITTED: 2, EOS_EMITTED: 3}


@dataclass(frozen=True)
class TimelineEvent:
    time_ms: float
    kind: str
    block: int = 0
    step: int = 0


@dataclass
class DecodeTimeline:
    """Event log of one decode session on the simulated clock."""

    step_cost_ms: float
    audio_ms: float
    total_blocks: int
    utterance_id: str = ""
    events: list[TimelineEvent] = field(default_factory=list)
    wall_ms: Optional[float] = None

    def record(self, kind: str, time_ms: float, block: int = 0, step: int = 0) -> None:
        if kind not in EVENT_KINDS:
            raise ContractViolation(f"unknown timeline event kind {kind!r}")
        self.events.append(TimelineEvent(time_ms, kind, block, step))

    def finalize(self) -> None:
        self.events.sort(key=lambda e: (e.time_ms, _KIND_ORDER[e.kind]))
        ends = [e for e in self.events if e.kind == UTTERANCE_END]
        if len(ends) != 1:
            raise ContractViolation(f"timeline needs exactly one utterance_end, has {len(ends)}")

    def of_kind(self, kind: str) -> list[TimelineEvent]:
        return [e for e in self.events if e.kind == kind]

    @property
    def utterance_end(self) -> float:
        return self.of_kind(UTTERANCE_END)[0].time_ms

    @property
    def eos_time(self) -> Optional[float]:
        eos = self.of_kind(EOS_EMITTED)
        return eos[0].time_ms if eos else None

    @property
    def committed_steps(self) -> int:
        return len(self.of_kind(STEP_COMMITTED))

    @property
    def discarded_steps(self) -> int:
        return len(self.of_kind(STEP_DISCARDED))

    @property
    def last_steps(self) -> int:
        """Committed steps run once the final block was available to the decoder."""
        return sum(1 for e in self.of_kind(STEP_COMMITTED) if e.block == self.total_blocks)

    @property
    def compute_ms(self) -> float:
        return (self.committed_steps + self.discarded_steps) * self.step_cost_ms


def ep_latency(timeline: DecodeTimeline) -> Optional[float]:
    """Delay from the end of the audio to the final ``eos``, or None if truncated."""
    eos = timeline.eos_time
    if eos is None:
        return None
    return max(eos - timeline.utterance_end, 0.0)


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ``ceil(p/100 * n)``-th smallest value."""
    if not values:
        raise ContractViolation("percentile of an empty list")
    if not 0 < p <= 100:
        raise ContractViolation(f"percentile rank must lie in (0, 100], got {p}")
    ordered = sorted(values)
    rank = math.ceil(p / 100.0 * len(ordered))
    return ordered[max(rank, 1) - 1]


def avg_last_steps(timelines: Sequence[DecodeTimeline]) -> float:
    if not timelines:
        raise ContractViolation("avg_last_steps needs at least one timeline")
    return sum(t.last_steps for t in timelines) / len(timelines)


def rtf(timelines: Sequence[DecodeTimeline], wall_clock: bool = False) -> float:
    """Decode compute time over audio duration.

    Simulated mode charges ``step_cost_ms`` per executed step, committed or
    discarded; wall-clock mode uses the measured decode time instead.
    """
    audio = sum(t.audio_ms for t in timelines)
    if audio <= 0:
        raise ContractViolation("rtf needs a positive total audio duration")
    if wall_clock:
        if any(t.wall_ms is None for t in timelines):
            raise ContractViolation("wall-clock rtf requested but a timeline has no measurement")
        return sum(t.wall_ms for t in timelines) / audio
    return sum(t.compute_ms for t in timelines) / audio


@dataclass(frozen=True)
class UtteranceRow:
    utterance_id: str
    mode: str
    ep_latency_ms: Optional[float]
    last_steps: int
    committed_steps: int
    discarded_steps: int
    audio_ms: float
    compute_ms: float
    correct: Optional[bool] = None


@dataclass(frozen=True)
class MetricsReport:
    ep50: Optional[float]
    ep90: Optional[float]
    rtf: float
    avg_last_steps: float
    discard_count: int
    truncated_count: int
    rows: tuple[UtteranceRow, ...]
    clock: str = "simulated"

    def to_dict(self) -> dict:
        summary = {
            "clock": self.clock,
            "utterances": len(self.rows),
            "ep50_ms": self.ep50,
            "ep90_ms": self.ep90,
            "rtf": self.rtf,
            "avg_last_steps": self.avg_last_steps,
            "discard_count": self.discard_count,
            "truncated_count": self.truncated_count,
        }
        return {"summary": summary, "utterances": [asdict(r) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary_csv_row(self) -> dict:
        return {
            "utterance_id": "SUMMARY",
            "mode": self.rows[0].mode if self.rows else "",
            "ep_latency_ms": f"ep50={_fmt(self.ep50)};ep90={_fmt(self.ep90)}",
            "last_steps": f"{self.avg_last_steps:.6g}",
            "committed_steps": sum(r.committed_steps for r in self.rows),
            "discarded_steps": self.discard_count,
            "audio_ms": sum(r.audio_ms for r in self.rows),
            "compute_ms": sum(r.compute_ms for r in self.rows),
            "correct": f"rtf={self.rtf:.6g}",
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(UtteranceRow.__dataclass_fields__)
        writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(asdict(row))
        writer.writerow(self.summary_csv_row())
        return buf.getvalue()


def _fmt(value: Optional[float]) -> str:
    return "NA" if value is None else f"{value:.6g}"


def build_report(
    timelines: Sequence[DecodeTimeline],
    mode: str,
    correct: Optional[Sequence[Optional[bool]]] = None,
    wall_clock: bool = False,
) -> MetricsReport:
    rows = []
    latencies = []
    for k, timeline in enumerate(timelines):
        latency = ep_latency(timeline)
        if latency is not None:
            latencies.append(latency)
        rows.append(
            UtteranceRow(
                utterance_id=timeline.utterance_id,
                mode=mode,
                ep_latency_ms=latency,
                last_steps=timeline.last_steps,
                committed_steps=timeline.committed_steps,
                discarded_steps=timeline.discarded_steps,
                audio_ms=timeline.audio_ms,
                compute_ms=timeline.compute_ms,
                correct=None if correct is None else correct[k],
            )
        )
    return MetricsReport(
        ep50=percentile(latencies, 50) if latencies else None,
        ep90=percentile(latencies, 90) if latencies else None,
        rtf=rtf(timelines, wall_clock) if timelines else 0.0,
        avg_last_steps=avg_last_steps(timelines) if timelines else 0.0,
        discard_count=sum(t.discarded_steps for t in timelines),
        truncated_count=len(timelines) - len(latencies),
        rows=tuple(rows),
        clock="wall" if wall_clock else "simulated",
    )


class MetricsAggregator:
    """Thread-safe sink for per-utterance timelines.

    Submission order does not matter; reports are built in utterance-id
    order.
    """

    def __init__(self, mode: str) -> None:
        self.mode = mode
        self._lock = threading.Lock()
        self._items: dict[str, tuple[DecodeTimeline, Optional[bool]]] = {}

    def submit(self, timeline: DecodeTimeline, correct: Optional[bool] = None) -> None:
        with self._lock:
            if timeline.utterance_id in self._items:
                raise ContractViolation(f"duplicate utterance id {timeline.utterance_id!r}")
            self._items[timeline.utterance_id] = (timeline, correct)

    def report(self, order: Optional[Iterable[str]] = None, wall_clock: bool = False) -> MetricsReport:
        with self._lock:
            keys = list(order) if order is not None else sorted(self._items)
            items = [self._items[k] for k in keys]
        return build_report([t for t, _ in items], self.mode, [c for _, c in items], wall_clock)

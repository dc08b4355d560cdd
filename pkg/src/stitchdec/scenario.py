"""Scenario files and the synthetic suite generator.

A scenario file is a single versioned JSON document::

    {
      "format": "stitchdec-scenarios",
      "version": 1,
      "vocabulary": {"tokens": [...], "blank_id": 0, "sos_id": 1, "eos_id": 2},
      "schedule": {"frames_per_block": 8, "frame_shift_ms": 40.0},
      "scenarios": [{"id": "utt0000", "reference_tokens": [...], ...}, ...]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np

from stitchdec.blocks import DEFAULT_FRAME_SHIFT_MS, BlockSchedule
from stitchdec.errors import ContractViolation, ScenarioFormatError
from stitchdec.scorer import SyntheticScenario, Vocabulary

FORMAT_NAME = "stitchdec-scenarios"
FORMAT_VERSION = 1
DEFAULT_FRAMES_PER_BLOCK = 8


@dataclass(frozen=True)
class ScenarioFile:
    vocab: Vocabulary
    scenarios: tuple[SyntheticScenario, ...]
    frames_per_block: int = DEFAULT_FRAMES_PER_BLOCK
    frame_shift: float = DEFAULT_FRAME_SHIFT_MS

    def schedule_for(self, scenario: SyntheticScenario) -> BlockSchedule:
        return BlockSchedule.from_frames(scenario.num_frames, self.frames_per_block, self.frame_shift)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "vocabulary": {
                "tokens": list(self.vocab.tokens),
                "blank_id": self.vocab.blank_id,
                "sos_id": self.vocab.sos_id,
                "eos_id": self.vocab.eos_id,
            },
            "schedule": {"frames_per_block": self.frames_per_block, "frame_shift_ms": self.frame_shift},
            "scenarios": [_scenario_to_dict(s) for s in self.scenarios],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _scenario_to_dict(s: SyntheticScenario) -> dict:
    return {
        "id": s.scenario_id,
        "reference_tokens": list(s.reference_tokens),
        "alignment": list(s.alignment),
        "num_frames": s.num_frames,
        "peakiness": s.peakiness,
        "attention_width": s.attention_width,
        "misalignment_events": [list(e) for e in s.misalignment_events],
        "noise_seed": s.noise_seed,
    }


def _require(obj: dict, key: str, kind: Any, where: str) -> Any:
    if not isinstance(obj, dict):
        raise ScenarioFormatError(f"{where}: expected an object")
    if key not in obj:
        raise ScenarioFormatError(f"{where}.{key}: missing field")
    value = obj[key]
    # bool is an int subclass; reject it where a number is expected
    if isinstance(value, bool) and kind is not bool:
        raise ScenarioFormatError(f"{where}.{key}: expected {_kind_name(kind)}, got boolean")
    if not isinstance(value, kind):
        raise ScenarioFormatError(f"{where}.{key}: expected {_kind_name(kind)}, got {type(value).__name__}")
    return value


def _kind_name(kind: Any) -> str:
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return kind.__name__


def _int_list(obj: dict, key: str, where: str) -> list[int]:
    values = _require(obj, key, list, where)
    for k, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ScenarioFormatError(f"{where}.{key}[{k}]: expected integer")
    return values


def parse_scenario_file(text: str, source: str = "<string>") -> ScenarioFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ScenarioFormatError(f"{source}: top level must be an object")
    if doc.get("format") != FORMAT_NAME:
        raise ScenarioFormatError(f"{source}: format: expected {FORMAT_NAME!r}")
    version = _require(doc, "version", int, source)
    if version != FORMAT_VERSION:
        raise ScenarioFormatError(f"{source}: version: unsupported version {version}")

    vdoc = _require(doc, "vocabulary", dict, source)
    tokens = _require(vdoc, "tokens", list, "vocabulary")
    if not all(isinstance(t, str) for t in tokens):
        raise ScenarioFormatError("vocabulary.tokens: expected a list of strings")
    try:
        vocab = Vocabulary(
            tuple(tokens),
            _require(vdoc, "blank_id", int, "vocabulary"),
            _require(vdoc, "sos_id", int, "vocabulary"),
            _require(vdoc, "eos_id", int, "vocabulary"),
        )
    except ContractViolation as exc:
        raise ScenarioFormatError(f"vocabulary: {exc}") from exc

    sdoc = _require(doc, "schedule", dict, source)
    frames_per_block = _require(sdoc, "frames_per_block", int, "schedule")
    frame_shift = float(_require(sdoc, "frame_shift_ms", (int, float), "schedule"))
    if frames_per_block < 1:
        raise ScenarioFormatError("schedule.frames_per_block: must be positive")
    if frame_shift <= 0:
        raise ScenarioFormatError("schedule.frame_shift_ms: must be positive")

    scenarios = []
    seen = set()
    for k, entry in enumerate(_require(doc, "scenarios", list, source)):
        where = f"scenarios[{k}]"
        sid = _require(entry, "id", str, where)
        if sid in seen:
            raise ScenarioFormatError(f"{where}.id: duplicate id {sid!r}")
        seen.add(sid)
        events = []
        for j, ev in enumerate(_require(entry, "misalignment_events", list, where)):
            if (
                not isinstance(ev, list)
                or len(ev) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in ev)
            ):
                raise ScenarioFormatError(f"{where}.misalignment_events[{j}]: expected [step, offset]")
            events.append((ev[0], ev[1]))
        scenario = SyntheticScenario(
            scenario_id=sid,
            reference_tokens=tuple(_int_list(entry, "reference_tokens", where)),
            alignment=tuple(_int_list(entry, "alignment", where)),
            num_frames=_require(entry, "num_frames", int, where),
            peakiness=float(_require(entry, "peakiness", (int, float), where)),
            attention_width=float(_require(entry, "attention_width", (int, float), where)),
            misalignment_events=tuple(events),
            noise_seed=_require(entry, "noise_seed", int, where),
        )
        try:
            scenario.validate(vocab)
        except ContractViolation as exc:
            raise ScenarioFormatError(f"{where}: {exc}") from exc
        scenarios.append(scenario)
    return ScenarioFile(vocab, tuple(scenarios), frames_per_block, frame_shift)


def load_scenario_file(path: Union[str, Path]) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioFormatError(f"{path}: {exc.strerror}") from exc
    return parse_scenario_file(text, str(path))


@dataclass(frozen=True)
class GeneratorParams:
    count: int = 100
    vocab_size: int = 20
    min_tokens: int = 8
    max_tokens: int = 24
    misalignment_rate: float = 0.0
    repeat_rate: float = 0.0
    seed: int = 0
    frames_per_block: int = DEFAULT_FRAMES_PER_BLOCK
    frame_shift: float = DEFAULT_FRAME_SHIFT_MS
    min_gap: int = 2
    max_gap: int = 5
    peakiness: tuple[float, float] = (0.9, 1.0)
    attention_width: tuple[float, float] = (1.0, 2.0)
    offset: tuple[int, int] = (3, 6)

    def check(self) -> None:
        if self.count < 0:
            raise ContractViolation("count must be non-negative")
        if self.vocab_size < 4:
            raise ContractViolation("vocab size must be at least 4 (three special symbols)")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ContractViolation("need 1 <= min_tokens <= max_tokens")
        if not 0.0 <= self.misalignment_rate <= 1.0:
            raise ContractViolation("misalignment rate must lie in [0, 1]")
        if not 0.0 <= self.repeat_rate <= 1.0:
            raise ContractViolation("repeat rate must lie in [0, 1]")
        if not 2 <= self.min_gap <= self.max_gap:
            raise ContractViolation("need 2 <= min_gap <= max_gap")
        if self.frames_per_block < 1 or self.frame_shift <= 0:
            raise ContractViolation("frames_per_block and frame_shift must be positive")
        lo, hi = self.peakiness
        if not 0.0 < lo <= hi <= 1.0:
            raise ContractViolation("peakiness range must lie in (0, 1]")
        lo, hi = self.attention_width
        if not 0.0 < lo <= hi:
            raise ContractViolation("attention width range must be positive")
        lo, hi = self.offset
        if not 1 <= lo <= hi:
            raise ContractViolation("offset range must be positive")


def _tokens(rng: np.random.Generator, n: int, regular: np.ndarray, repeat_rate: float) -> list[int]:
    out: list[int] = []
    while len(out) < n:
        if out and rng.random() < repeat_rate:
            span = 2 if len(out) >= 2 and rng.random() < 0.5 else 1
            out.extend(out[-span:])
        else:
            out.append(int(rng.choice(regular)))
    return out[:n]


def _pick_event(
    rng: np.random.Generator,
    alignment: list[int],
    schedule: BlockSchedule,
    offset_range: tuple[int, int],
) -> tuple[int, int]:
    lo, hi = offset_range
    # the event must be able to fire before the final block, and the jump
    # needs room behind the previous token
    valid = [
        s
        for s in range(2, len(alignment) + 1)
        if schedule.block_of(alignment[s - 1]) < schedule.total_blocks and alignment[s - 2] > lo
    ]
    if not valid:
        valid = list(range(2, len(alignment) + 1)) or [1]
    step = int(rng.choice(valid))
    room = alignment[step - 2] - 1 if step >= 2 else hi
    offset = int(rng.integers(lo, max(lo, min(hi, room)) + 1))
    return step, offset


def generate_suite(params: GeneratorParams) -> ScenarioFile:
    """Build ``params.count`` deterministic scenarios.

    Scenario ``k`` depends only on ``(seed, k)`` and the other parameters.
    """
    params.check()
    vocab = Vocabulary.default(params.vocab_size)
    regular = np.asarray(vocab.regular_ids)
    min_tokens = params.min_tokens
    if params.misalignment_rate > 0:
        min_tokens = max(min_tokens, 2)
    max_tokens = max(params.max_tokens, min_tokens)
    scenarios = []
    for k in range(params.count):
        rng = np.random.default_rng([params.seed, k])
        n = int(rng.integers(min_tokens, max_tokens + 1))
        body = _tokens(rng, n, regular, params.repeat_rate)
        frame = int(rng.integers(1, min(params.frames_per_block, 4) + 1))
        alignment = [frame]
        for _ in range(n - 1):
            frame += int(rng.integers(params.min_gap, params.max_gap + 1))
            alignment.append(frame)
        num_frames = frame + int(rng.integers(1, 4))
        schedule = BlockSchedule.from_frames(num_frames, params.frames_per_block, params.frame_shift)
        events: tuple[tuple[int, int], ...] = ()
        if n >= 2 and rng.random() < params.misalignment_rate:
            events = (_pick_event(rng, alignment, schedule, params.offset),)
        scenarios.append(
            SyntheticScenario(
                scenario_id=f"utt{k:04d}",
                reference_tokens=tuple(body) + (vocab.eos_id,),
                alignment=tuple(alignment),
                num_frames=num_frames,
                peakiness=round(float(rng.uniform(*params.peakiness)), 6),
                attention_width=round(float(rng.uniform(*params.attention_width)), 6),
                misalignment_events=events,
                noise_seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return ScenarioFile(vocab, tuple(scenarios), params.frames_per_block, params.frame_shift)

"""Blockwise-synchronous joint CTC/attention beam search.

:func:`decode` runs the hybrid run-and-back-stitch search. While encoder
blocks are still arriving, every synchronous step is checked twice:

* back stitch: if any hypothesis in the new beam ends in ``eos`` or its
  attention jumped backwards (probability above ``upsilon``), the whole step
  is thrown away and the decoder waits for the next block;
* running stitch: otherwise the step is kept, and if the expected number of
  tokens left after the attended frame is below ``nu`` the decoder also
  moves on to the next block.

Once the final block is in, ordinary beam search finishes the utterance.
The other modes switch individual checks off (or, for ``bsdec_repeat``,
swap the back-jump test for a repeated-token test) to serve as baselines.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from stitchdec.attention import AttentionSnapshot, detect_back_stitch
from stitchdec.blocks import BlockSchedule, EncoderBlockView, advance, utterance_end_time
from stitchdec.ctc_prefix import extend_states, extension_scores, full_score, prefix_forward
from stitchdec.endpoint import CtcPosteriorBlock, endpoint_reached, expected_remaining
from stitchdec.errors import ContractViolation
from stitchdec.metrics import (
    BLOCK_ARRIVAL,
    EOS_EMITTED,
    STEP_COMMITTED,
    STEP_DISCARDED,
    UTTERANCE_END,
    DecodeTimeline,
)
from stitchdec.scorer import StepScorer

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    RABS = "rabs"
    RUN_ONLY = "run_only"
    BACK_ONLY = "back_only"
    BSDEC_REPEAT = "bsdec_repeat"
    BATCH = "batch"

    @classmethod
    def parse(cls, name: str) -> "Mode":
        aliases = {"run": cls.RUN_ONLY, "back": cls.BACK_ONLY, "bsdec": cls.BSDEC_REPEAT}
        if name in aliases:
            return aliases[name]
        return cls(name)

    @property
    def running_stitch(self) -> bool:
        return self in (Mode.RABS, Mode.RUN_ONLY)

    @property
    def back_jump(self) -> bool:
        return self in (Mode.RABS, Mode.BACK_ONLY)


@dataclass(frozen=True)
class SearchConfig:
    beam_width: int = 10
    nu: float = 1.0
    upsilon: float = 0.5
    max_len: int = 200
    ctc_weight: float = 0.4
    mode: Mode = Mode.RABS
    repeat_ngram: int = 1
    step_cost_ms: float = 10.0

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ContractViolation("beam width must be at least 1")
        if self.max_len < 1:
            raise ContractViolation("max_len must be at least 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ContractViolation("ctc_weight must lie in [0, 1]")
        if self.repeat_ngram < 1:
            raise ContractViolation("repeat_ngram must be at least 1")
        if self.step_cost_ms < 0:
            raise ContractViolation("step cost cannot be negative")
        if not isinstance(self.mode, Mode):
            object.__setattr__(self, "mode", Mode.parse(self.mode))


@dataclass(frozen=True, eq=False)
class Hypothesis:
    tokens: tuple[int, ...]
    attn_score: float
    ctc_score: float
    combined: float
    last_attention: Optional[AttentionSnapshot] = None
    prev_attention: Optional[AttentionSnapshot] = None
    finished: bool = False
    # (frames, r_n, r_b) of the CTC prefix forward pass, frames counted in the view it was computed for
    ctc_state: Optional[tuple[int, np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @classmethod
    def initial(cls, sos_id: int) -> "Hypothesis":
        return cls((sos_id,), 0.0, 0.0, 0.0)

    @property
    def length(self) -> int:
        """Number of decoded tokens, ``sos`` excluded."""
        return len(self.tokens) - 1

    @property
    def labels(self) -> tuple[int, ...]:
        return self.tokens[1:]


@dataclass
class DecodeResult:
    best: Hypothesis
    completed: list[Hypothesis]
    timeline: DecodeTimeline
    truncated: bool = False

    @property
    def transcript(self) -> tuple[int, ...]:
        return self.best.labels


def _sort_key(item: tuple[float, int, int, int]) -> tuple:
    combined, token, length, parent = item
    return (-combined, token, length, parent)


def _parent_states(beam: Sequence[Hypothesis], posterior: CtcPosteriorBlock) -> tuple[np.ndarray, np.ndarray]:
    """Forward variables of every beam member under ``posterior``.

    States cached on a hypothesis are reused when they were computed for the
    same number of frames; the rest are recomputed in batches by length.
    """
    frames = posterior.frames
    r_n = np.empty((len(beam), frames))
    r_b = np.empty((len(beam), frames))
    stale: dict[int, list[int]] = {}
    for k, hyp in enumerate(beam):
        if hyp.ctc_state is not None and hyp.ctc_state[0] == frames:
            r_n[k], r_b[k] = hyp.ctc_state[1], hyp.ctc_state[2]
        else:
            stale.setdefault(hyp.length, []).append(k)
    for length, members in stale.items():
        labels = np.asarray([beam[k].labels for k in members], dtype=np.int64).reshape(len(members), length)
        n, b = prefix_forward(posterior.log_rows, labels, posterior.blank_id)
        r_n[members], r_b[members] = n, b
    return r_n, r_b


def search_step(
    beam: Sequence[Hypothesis],
    view: EncoderBlockView,
    scorer: StepScorer,
    config: SearchConfig,
) -> list[Hypothesis]:
    """Expand every hypothesis by one token and keep the best ``beam_width``.

    Candidates are ranked by ``(1 - lambda) * attention + lambda * ctc``;
    ties go to the smaller token id, then the shorter hypothesis, then the
    better-ranked parent.
    """
    if not beam:
        raise ContractViolation("cannot expand an empty beam")
    if any(h.finished for h in beam):
        raise ContractViolation("finished hypotheses cannot be expanded")
    vocab = scorer.vocab
    posterior = view.posterior if view.posterior is not None else scorer.ctc_posterior(view)
    log_post = posterior.log_rows
    if posterior.vocab_size != vocab.size:
        raise ContractViolation("posterior and vocabulary sizes differ")

    steps = [scorer.step(h.tokens, view) for h in beam]
    r_n, r_b = _parent_states(beam, posterior)
    last = np.asarray([h.tokens[-1] if h.length else -1 for h in beam])
    ctc = extension_scores(log_post, r_n, r_b, last, posterior.blank_id)
    ctc[:, vocab.eos_id] = full_score(r_n, r_b)

    lam = config.ctc_weight
    attn = np.stack([h.attn_score + s.log_probs for h, s in zip(beam, steps)])
    with np.errstate(invalid="ignore"):
        combined = (1.0 - lam) * attn + lam * ctc if lam > 0 else attn.copy()
    combined[:, [vocab.blank_id, vocab.sos_id]] = -np.inf

    candidates = []
    for k, hyp in enumerate(beam):
        row = combined[k]
        for token in np.flatnonzero(np.isfinite(row)):
            candidates.append((float(row[token]), int(token), hyp.length + 1, k))
    candidates.sort(key=_sort_key)
    chosen = candidates[: config.beam_width]

    open_rows = [(k, token) for _, token, _, k in chosen if token != vocab.eos_id]
    states = {}
    if open_rows:
        parents = np.asarray([k for k, _ in open_rows])
        tokens = np.asarray([t for _, t in open_rows])
        n, b = extend_states(log_post, r_n[parents], r_b[parents], last[parents], tokens, posterior.blank_id)
        for j, key in enumerate(open_rows):
            states[key] = (posterior.frames, n[j], b[j])

    out = []
    for score, token, _, k in chosen:
        parent = beam[k]
        out.append(
            Hypothesis(
                tokens=parent.tokens + (token,),
                attn_score=float(attn[k, token]),
                ctc_score=float(ctc[k, token]),
                combined=score,
                last_attention=steps[k].attention,
                prev_attention=parent.last_attention,
                finished=token == vocab.eos_id,
                ctc_state=states.get((k, token)),
            )
        )
    return out


def ending_criterion(beam: Sequence[Hypothesis], completed: Sequence[Hypothesis], config: SearchConfig) -> bool:
    """Stop once no active hypothesis can still beat the best completed one.

    Scores only decrease as hypotheses grow, so this is exact.
    """
    if not beam:
        return True
    if not completed:
        return False
    return max(h.combined for h in completed) >= max(h.combined for h in beam)


def has_immediate_repeat(tokens: Sequence[int], n: int) -> bool:
    """True if the trailing ``n``-gram occurs twice in a row at the end."""
    if len(tokens) < 2 * n:
        return False
    return tuple(tokens[-n:]) == tuple(tokens[-2 * n : -n])


def _exceeds_endpoint(hyp: Hypothesis, config: SearchConfig, eos_id: int) -> bool:
    mode = config.mode
    if mode.back_jump:
        return detect_back_stitch(hyp, config.upsilon, eos_id).triggered
    if hyp.tokens[-1] == eos_id:
        return True
    if mode is Mode.BSDEC_REPEAT:
        return has_immediate_repeat(hyp.labels, config.repeat_ngram)
    return False


def _best(hyps: Sequence[Hypothesis]) -> Hypothesis:
    # max() keeps the first of equal scores, and beams are already ordered
    return max(hyps, key=lambda h: h.combined)


class StreamingDecoder:
    """Stateful driver for one utterance.

    ``block_step`` runs one synchronous step while more blocks are due and
    ``final_step`` one ordinary step on the full utterance; ``run`` loops
    both to completion. The state (``beam``, ``block``, ``step``, ``clock``)
    is exposed for inspection between steps.
    """

    def __init__(self, scorer: StepScorer, schedule: BlockSchedule, config: SearchConfig, utterance_id: str = ""):
        self.scorer = scorer
        self.schedule = schedule
        self.config = config
        self.vocab = scorer.vocab
        self.total = schedule.total_blocks
        self.timeline = DecodeTimeline(
            step_cost_ms=config.step_cost_ms,
            audio_ms=utterance_end_time(schedule),
            total_blocks=self.total,
            utterance_id=utterance_id,
        )
        self.block = self.total if config.mode is Mode.BATCH else 1
        self.clock = schedule.arrival_time(self.block)
        self.beam: list[Hypothesis] = [Hypothesis.initial(self.vocab.sos_id)]
        self.step = 1
        self.completed: list[Hypothesis] = []
        self._finish_time: dict[int, float] = {}
        self._last_active = self.beam
        self._views: dict[int, EncoderBlockView] = {}

    def view(self, block: int) -> EncoderBlockView:
        if block not in self._views:
            bare = self.schedule.view(block) if block == 1 else advance(self.schedule, block - 1)
            self._views[block] = dataclasses.replace(bare, posterior=self.scorer.ctc_posterior(bare))
        return self._views[block]

    @property
    def in_block_phase(self) -> bool:
        return self.block < self.total and self.step <= self.config.max_len

    @property
    def in_final_phase(self) -> bool:
        return (
            self.block == self.total
            and self.step <= self.config.max_len
            and not ending_criterion(self.beam, self.completed, self.config)
        )

    def _next_block(self) -> None:
        self.block += 1
        self.clock = max(self.clock, self.schedule.arrival_time(self.block))

    def block_step(self) -> str:
        """One step while blocks are still arriving.

        Returns ``"discarded"`` if the expansion ran past the endpoint (the
        beam is left untouched), ``"advanced"`` if it was kept and the
        running stitch moved on to the next block, else ``"committed"``.
        """
        view = self.view(self.block)
        expanded = search_step(self.beam, view, self.scorer, self.config)
        self.clock += self.config.step_cost_ms
        if any(_exceeds_endpoint(h, self.config, self.vocab.eos_id) for h in expanded):
            self.timeline.record(STEP_DISCARDED, self.clock, self.block, self.step)
            self._next_block()
            return "discarded"
        self.beam = expanded
        self.timeline.record(STEP_COMMITTED, self.clock, self.block, self.step)
        self.step += 1
        if self.config.mode.running_stitch:
            expectation = expected_remaining(view.posterior.profile.remaining, expanded[0].last_attention.averaged)
            if endpoint_reached(expectation, self.config.nu):
                self._next_block()
                return "advanced"
        return "committed"

    def final_step(self) -> None:
        """One ordinary beam-search step on the complete utterance."""
        expanded = search_step(self.beam, self.view(self.total), self.scorer, self.config)
        self.clock += self.config.step_cost_ms
        self.timeline.record(STEP_COMMITTED, self.clock, self.block, self.step)
        for hyp in expanded:
            if hyp.finished:
                self.completed.append(hyp)
                self._finish_time[id(hyp)] = self.clock
        self.beam = [h for h in expanded if not h.finished]
        if self.beam:
            self._last_active = self.beam
        self.step += 1

    def run(self) -> DecodeResult:
        started = time.perf_counter()
        while self.in_block_phase:
            self.block_step()
        if self.block == self.total:
            self.view(self.total)
            while self.in_final_phase:
                self.final_step()
        return self._finish(started)

    def _finish(self, started: float) -> DecodeResult:
        timeline = self.timeline
        for b in range(1, self.total + 1):
            timeline.record(BLOCK_ARRIVAL, self.schedule.arrival_time(b), b)
        timeline.record(UTTERANCE_END, utterance_end_time(self.schedule), self.total)
        truncated = not self.completed
        if truncated:
            best = _best(self._last_active)
            logger.warning(
                "%s: no hypothesis completed within %d steps", timeline.utterance_id or "utterance", self.config.max_len
            )
        else:
            best = _best(self.completed)
            timeline.record(EOS_EMITTED, self._finish_time[id(best)], self.total)
        timeline.finalize()
        timeline.wall_ms = (time.perf_counter() - started) * 1000.0
        return DecodeResult(best, list(self.completed), timeline, truncated)


def decode(
    scorer: StepScorer,
    schedule: BlockSchedule,
    config: SearchConfig,
    utterance_id: str = "",
) -> DecodeResult:
    """Decode one utterance with blockwise-synchronous beam search.

    Returns the best completed hypothesis, every completed hypothesis and the
    simulated-clock timeline. If ``max_len`` is hit before anything
    completes, the best unfinished hypothesis is returned with
    ``truncated=True``.
    """
    return StreamingDecoder(scorer, schedule, config, utterance_id).run()

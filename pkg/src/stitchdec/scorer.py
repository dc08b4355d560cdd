"""Decoder-step contract and a deterministic synthetic scorer.

The synthetic scorer stands in for a trained encoder-decoder. It fabricates
CTC posteriors and multi-head attention from a ground-truth token-to-frame
alignment, so the search sees the same qualitative signals a real model
gives at block boundaries: confident, monotone attention while evidence is
available, and an attention pile-up plus an ``eos`` guess once the decoder
runs past the visible frames. Scripted misalignment events make attention
jump backwards and repeat the previous token.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Protocol, Sequence

import numpy as np

from stitchdec.attention import AttentionSnapshot
from stitchdec.blocks import BlockSchedule, EncoderBlockView
from stitchdec.endpoint import CtcPosteriorBlock
from stitchdec.errors import ContractViolation


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    blank_id: int = 0
    sos_id: int = 1
    eos_id: int = 2

    def __post_init__(self) -> None:
        specials = (self.blank_id, self.sos_id, self.eos_id)
        if len(set(specials)) != 3:
            raise ContractViolation("blank, sos and eos ids must be distinct")
        for name, idx in zip(("blank_id", "sos_id", "eos_id"), specials):
            if not 0 <= idx < len(self.tokens):
                raise ContractViolation(f"{name}={idx} outside [0, {len(self.tokens)})")
        if len(self.tokens) < 4:
            raise ContractViolation("vocabulary needs at least one regular token")

    @classmethod
    def default(cls, size: int) -> "Vocabulary":
        """Three special symbols followed by ``size - 3`` short token names."""
        if size < 4:
            raise ContractViolation("vocabulary size must be at least 4")
        names = ["<blank>", "<sos>", "<eos>"]
        names += [f"t{k:02d}" for k in range(size - 3)]
        return cls(tuple(names))

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def regular_ids(self) -> tuple[int, ...]:
        specials = {self.blank_id, self.sos_id, self.eos_id}
        return tuple(k for k in range(self.size) if k not in specials)

    def render(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[k] for k in ids)


@dataclass(frozen=True)
class SyntheticScenario:
    """One synthetic utterance.

    ``alignment[k]`` is the 1-based frame at which ``reference_tokens[k]``
    is emitted; the trailing ``eos`` has no alignment. A misalignment event
    ``(step, offset)`` fires on 1-based decode step ``step`` (which would
    produce ``reference_tokens[step - 1]``) while that token's frame lies in
    the newest block: attention lands ``offset`` frames behind the previous
    step's target and the previous token is repeated.
    """

    scenario_id: str
    reference_tokens: tuple[int, ...]
    alignment: tuple[int, ...]
    num_frames: int
    peakiness: float = 0.95
    attention_width: float = 1.5
    misalignment_events: tuple[tuple[int, int], ...] = ()
    noise_seed: int = 0

    def validate(self, vocab: Vocabulary) -> None:
        ref = self.reference_tokens
        if not ref or ref[-1] != vocab.eos_id:
            raise ContractViolation(f"{self.scenario_id}: reference_tokens must end with eos")
        body = ref[:-1]
        if len(self.alignment) != len(body):
            raise ContractViolation(
                f"{self.scenario_id}: alignment has {len(self.alignment)} frames "
                f"for {len(body)} tokens"
            )
        regular = set(vocab.regular_ids)
        for k, token in enumerate(body):
            if token not in regular:
                raise ContractViolation(
                    f"{self.scenario_id}: reference token {k} ({token}) is not a regular token"
                )
        frames = list(self.alignment)
        if any(not 1 <= f <= self.num_frames for f in frames):
            raise ContractViolation(f"{self.scenario_id}: alignment frames must lie in [1, num_frames]")
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ContractViolation(f"{self.scenario_id}: alignment must be strictly increasing")
        for a, b, ya, yb in zip(frames, frames[1:], body, body[1:]):
            if ya == yb and b - a < 2:
                raise ContractViolation(
                    f"{self.scenario_id}: repeated token needs a blank frame between emissions"
                )
        if not 0.0 < self.peakiness <= 1.0:
            raise ContractViolation(f"{self.scenario_id}: peakiness must lie in (0, 1]")
        if self.attention_width <= 0:
            raise ContractViolation(f"{self.scenario_id}: attention_width must be positive")
        for step, offset in self.misalignment_events:
            if not 2 <= step <= len(body):
                raise ContractViolation(
                    f"{self.scenario_id}: misalignment step {step} outside [2, {len(body)}]"
                )
            if offset < 1:
                raise ContractViolation(f"{self.scenario_id}: misalignment offset must be positive")


@dataclass(frozen=True)
class ScorerSettings:
    """Knobs of the synthetic model that are not per-utterance."""

    heads: int = 4
    confidence: float = 0.9
    eos_floor: float = 1e-8
    premature_eos: float = 0.5
    premature_target: float = 0.3
    event_leak: float = 1e-10
    ctc_floor: float = 1e-6
    noise_concentration: float = 0.5


@dataclass(frozen=True, eq=False)
class ScorerStepResult:
    log_probs: np.ndarray
    attention: AttentionSnapshot


class StepScorer(Protocol):
    """What the search needs from a decoder."""

    vocab: Vocabulary

    def step(self, prefix: Sequence[int], view: EncoderBlockView) -> ScorerStepResult: ...

    def ctc_posterior(self, view: EncoderBlockView) -> CtcPosteriorBlock: ...


@dataclass(frozen=True)
class MultiHeadProjection:
    """Query/key construction whose scaled dot products give Gaussian attention.

    With ``k_t = sqrt(d) * [t, t^2]`` and ``q = [c / w^2, -1 / (2 w^2)]``,
    ``q . k / sqrt(d) = -(t - c)^2 / (2 w^2)`` up to a constant, so the
    per-head softmax is a discretized Gaussian centred on ``c``.
    """

    heads: int
    dim: int = 2
    jitter: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.heads < 1:
            raise ContractViolation("need at least one attention head")
        if self.dim != 2:
            raise ContractViolation("the synthetic projection uses d = 2")
        if not self.jitter:
            pattern = (0, -1, 1)
            object.__setattr__(self, "jitter", tuple(pattern[m % 3] for m in range(self.heads)))

    def keys(self, frames: int) -> np.ndarray:
        t = np.arange(1, frames + 1, dtype=np.float64)
        k = np.stack([t, t * t], axis=-1) * np.sqrt(self.dim)
        return np.broadcast_to(k, (self.heads, frames, self.dim))

    def queries(self, center: float, width: float, frames: int) -> np.ndarray:
        centers = np.clip(center + np.asarray(self.jitter, dtype=np.float64), 1, frames)
        inv = 1.0 / (width * width)
        return np.stack([centers * inv, np.full(self.heads, -0.5 * inv)], axis=-1)

    def attend(self, center: float, width: float, frames: int) -> np.ndarray:
        q = self.queries(center, width, frames)
        scores = np.einsum("md,mtd->mt", q, self.keys(frames)) / np.sqrt(self.dim)
        scores -= scores.max(axis=1, keepdims=True)
        weights = np.exp(scores)
        return weights / weights.sum(axis=1, keepdims=True)


class SyntheticScorer:
    """Alignment-driven stand-in for a trained CTC/attention model.

    Bound to one scenario and schedule; all outputs are pure functions of
    (scenario, prefix, view) and results are memoized.
    """

    def __init__(
        self,
        scenario: SyntheticScenario,
        vocab: Vocabulary,
        schedule: BlockSchedule,
        settings: Optional[ScorerSettings] = None,
    ) -> None:
        scenario.validate(vocab)
        if schedule.total_frames != scenario.num_frames:
            raise ContractViolation(
                f"{scenario.scenario_id}: schedule covers {schedule.total_frames} frames, "
                f"scenario has {scenario.num_frames}"
            )
        self.scenario = scenario
        self.vocab = vocab
        self.schedule = schedule
        self.settings = settings or ScorerSettings()
        self.projection = MultiHeadProjection(self.settings.heads)
        self._regular = np.asarray(vocab.regular_ids)
        self._events = dict(scenario.misalignment_events)
        self._posterior = self._build_posterior()
        self._step = lru_cache(maxsize=None)(self._step_uncached)
        self._ctc = lru_cache(maxsize=None)(self._ctc_uncached)

    @property
    def body(self) -> tuple[int, ...]:
        return self.scenario.reference_tokens[:-1]

    def _build_posterior(self) -> np.ndarray:
        sc, vocab, cfg = self.scenario, self.vocab, self.settings
        rng = np.random.default_rng([sc.noise_seed, 0xC7C])
        rows = np.zeros((sc.num_frames, vocab.size))
        noise = cfg.ctc_floor * rng.uniform(0.5, 1.5, size=(sc.num_frames, self._regular.size))
        rows[:, self._regular] = noise
        aligned = dict(zip(sc.alignment, self.body))
        for t in range(sc.num_frames):
            token = aligned.get(t + 1)
            if token is None:
                rows[t, vocab.blank_id] = 1.0 - rows[t].sum()
                continue
            rows[t, token] = 0.0
            rest = 1.0 - rows[t].sum()
            rows[t, token] = sc.peakiness * rest
            rows[t, vocab.blank_id] = rest - rows[t, token]
        return rows

    def _ctc_uncached(self, frames: int) -> CtcPosteriorBlock:
        return CtcPosteriorBlock(self._posterior[:frames], self.vocab.blank_id)

    def ctc_posterior(self, view: EncoderBlockView) -> CtcPosteriorBlock:
        return self._ctc(view.frames)

    def step(self, prefix: Sequence[int], view: EncoderBlockView) -> ScorerStepResult:
        if not prefix or prefix[0] != self.vocab.sos_id:
            raise ContractViolation("prefix must start with sos")
        return self._step(len(prefix), prefix[-1], view.block_index, view.frames)

    def _event_fires(self, position: int, block: int) -> bool:
        """Whether a misalignment is scripted for the token at ``position``.

        It fires only while that token sits in the newest, non-final block,
        i.e. when the decoder has little right context.
        """
        if position + 1 not in self._events or block >= self.schedule.total_blocks:
            return False
        return self.schedule.block_of(self.scenario.alignment[position]) == block

    def _noise(self, position: int, exclude: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Seeded spread of leftover probability over regular tokens."""
        ids = np.asarray([k for k in self._regular if k not in set(exclude)])
        rng = np.random.default_rng([self.scenario.noise_seed, 0xA77, position])
        weights = rng.dirichlet(np.full(ids.size, self.settings.noise_concentration))
        return ids, weights

    def _distribution(self, peaks: dict[int, float], position: int) -> np.ndarray:
        probs = np.zeros(self.vocab.size)
        for token, mass in peaks.items():
            probs[token] += mass
        leftover = 1.0 - sum(peaks.values())
        ids, weights = self._noise(position, list(peaks))
        probs[ids] += leftover * weights
        with np.errstate(divide="ignore"):
            return np.log(probs)

    def _step_uncached(self, length: int, last: int, block: int, frames: int) -> ScorerStepResult:
        sc, cfg, eos = self.scenario, self.settings, self.vocab.eos_id
        position = length - 1  # index of the reference token due next
        body = self.body
        if position < len(body) and self._event_fires(position, block):
            offset = self._events[position + 1]
            center = max(1, min(sc.alignment[position - 1], frames) - offset)
            peaks = {last: 1.0 - cfg.event_leak - cfg.eos_floor, eos: cfg.eos_floor}
        elif position < len(body) and sc.alignment[position] <= frames:
            center = sc.alignment[position]
            peaks = {body[position]: cfg.confidence, eos: cfg.eos_floor}
        elif position < len(body):
            # ran past the visible frames: attention piles up at the edge
            center = frames
            peaks = {body[position]: cfg.premature_target, eos: cfg.premature_eos}
        else:
            center = frames
            peaks = {eos: cfg.confidence}
        per_head = self.projection.attend(center, sc.attention_width, frames)
        attention = AttentionSnapshot.from_heads(length, block, per_head)
        return ScorerStepResult(self._distribution(peaks, position), attention)

"""Streaming blockwise-synchronous beam search with run-and-back-stitch endpointing."""

from stitchdec.blocks import BlockSchedule, EncoderBlockView, advance, utterance_end_time
from stitchdec.scorer import ScorerSettings, SyntheticScenario, SyntheticScorer, Vocabulary
from stitchdec.search import DecodeResult, Hypothesis, Mode, SearchConfig, decode, search_step

__all__ = [
    "BlockSchedule",
    "DecodeResult",
    "EncoderBlockView",
    "Hypothesis",
    "Mode",
    "ScorerSettings",
    "SearchConfig",
    "SyntheticScenario",
    "SyntheticScorer",
    "Vocabulary",
    "advance",
    "decode",
    "search_step",
    "utterance_end_time",
]

__version__ = "0.1.0"

import pytest

from stitchdec.blocks import BlockSchedule
from stitchdec.scorer import SyntheticScenario, SyntheticScorer, Vocabulary


@pytest.fixture
def vocab():
    # ids: 0 blank, 1 sos, 2 eos, 3.. regular ("t00", "t01", ...)
    return Vocabulary.default(12)


@pytest.fixture
def make_scorer(vocab):
    def build(scenario: SyntheticScenario, frames_per_block: int = 8, **settings):
        from stitchdec.scorer import ScorerSettings

        schedule = BlockSchedule.from_frames(scenario.num_frames, frames_per_block)
        return SyntheticScorer(scenario, vocab, schedule, ScorerSettings(**settings)), schedule

    return build


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])

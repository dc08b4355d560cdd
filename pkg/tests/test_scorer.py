import numpy as np
import pytest

from stitchdec.attention import back_jump_probability
from stitchdec.errors import ContractViolation
from stitchdec.scenario import GeneratorParams, generate_suite
from stitchdec.scorer import MultiHeadProjection, SyntheticScenario, SyntheticScorer

SOS, EOS = 1, 2
A, B, C, D, E = 3, 4, 5, 6, 7


def _scenario(**overrides):
    fields = dict(
        scenario_id="s",
        reference_tokens=(A, B, C, D, E, EOS),
        alignment=(3, 7, 11, 15, 20),
        num_frames=24,
    )
    fields.update(overrides)
    return SyntheticScenario(**fields)


def test_first_step_targets_first_token(make_scorer):
    scorer, schedule = make_scorer(_scenario())
    result = scorer.step((SOS,), schedule.view(1))
    assert int(np.argmax(result.log_probs)) == A
    assert result.attention.peak == 3
    assert np.exp(result.log_probs).sum() == pytest.approx(1.0, abs=1e-6)


def test_full_prefix_on_full_view_prefers_eos(make_scorer):
    scorer, schedule = make_scorer(_scenario())
    result = scorer.step((SOS, A, B, C, D, E), schedule.view(schedule.total_blocks))
    assert int(np.argmax(result.log_probs)) == EOS


def test_premature_step_piles_attention_at_block_edge(make_scorer):
    scorer, schedule = make_scorer(_scenario())
    # block 1 covers frames 1..8, C sits at frame 11
    result = scorer.step((SOS, A, B), schedule.view(1))
    assert result.attention.peak == 8
    assert int(np.argmax(result.log_probs)) == EOS


def test_misalignment_event_jumps_back(make_scorer):
    # E sits at frame 20; extra frames keep its block from being the final one
    scorer, schedule = make_scorer(_scenario(misalignment_events=((5, 4),), num_frames=40))
    block = schedule.block_of(20)
    view = schedule.view(block)
    step4 = scorer.step((SOS, A, B, C), view).attention
    step5 = scorer.step((SOS, A, B, C, D), view).attention
    assert step5.peak == step4.peak - 4
    probability = back_jump_probability(step5.averaged, step4.averaged)
    assert probability > 0.5
    assert int(np.argmax(scorer.step((SOS, A, B, C, D), view).log_probs)) == D


def test_misalignment_silent_on_final_block(make_scorer):
    scorer, schedule = make_scorer(_scenario(misalignment_events=((5, 4),)))
    result = scorer.step((SOS, A, B, C, D), schedule.view(schedule.total_blocks))
    assert result.attention.peak == 20
    assert int(np.argmax(result.log_probs)) == E


def test_peaky_posterior_counts_tokens_exactly(make_scorer):
    scenario = _scenario(reference_tokens=(A, B, EOS), alignment=(3, 7), num_frames=8, peakiness=1.0)
    scorer, schedule = make_scorer(scenario, ctc_floor=0.0)
    post = scorer.ctc_posterior(schedule.view(1))
    assert post.profile.remaining[0] == 2.0


def test_no_aligned_frames_means_nothing_remaining(make_scorer):
    scenario = _scenario(reference_tokens=(A, B, EOS), alignment=(5, 7), num_frames=8, peakiness=1.0)
    scorer, schedule = make_scorer(scenario, frames_per_block=2, ctc_floor=0.0)
    assert scorer.ctc_posterior(schedule.view(1)).profile.remaining[0] == 0.0


def test_bit_identical_across_instances(make_scorer):
    first, schedule = make_scorer(_scenario(noise_seed=7))
    second, _ = make_scorer(_scenario(noise_seed=7))
    view = schedule.view(2)
    np.testing.assert_array_equal(first.ctc_posterior(view).rows, second.ctc_posterior(view).rows)
    a, b = first.step((SOS, A), view), second.step((SOS, A), view)
    np.testing.assert_array_equal(a.log_probs, b.log_probs)
    np.testing.assert_array_equal(a.attention.per_head, b.attention.per_head)


def test_prefix_changes_attention(make_scorer):
    scorer, schedule = make_scorer(_scenario())
    view = schedule.view(3)
    assert scorer.step((SOS,), view).attention.peak != scorer.step((SOS, A), view).attention.peak


def test_heads_are_jittered_but_average_is_centered():
    heads = MultiHeadProjection(4).attend(10.0, 1.5, 20)
    assert heads.shape == (4, 20)
    np.testing.assert_allclose(heads.sum(axis=1), 1.0)
    peaks = sorted(int(np.argmax(h)) + 1 for h in heads)
    assert peaks[0] == 9 and peaks[-1] == 11
    assert int(np.argmax(heads.mean(axis=0))) + 1 == 10


def test_scenario_validation(vocab):
    from stitchdec.blocks import BlockSchedule

    schedule = BlockSchedule.from_frames(24, 8)
    bad = [
        _scenario(reference_tokens=(A, B, C, D, E)),
        _scenario(alignment=(3, 7, 11, 15)),
        _scenario(alignment=(3, 7, 7, 15, 20)),
        _scenario(reference_tokens=(A, A, C, D, E, EOS), alignment=(3, 4, 11, 15, 20)),
        _scenario(misalignment_events=((1, 2),)),
        _scenario(misalignment_events=((3, 0),)),
    ]
    for scenario in bad:
        with pytest.raises(ContractViolation):
            SyntheticScorer(scenario, vocab, schedule)


def test_clean_scenarios_never_look_like_back_jumps():
    suite = generate_suite(GeneratorParams(count=30, seed=11))
    for scenario in suite.scenarios:
        schedule = suite.schedule_for(scenario)
        scorer = SyntheticScorer(scenario, suite.vocab, schedule)
        body = scenario.reference_tokens[:-1]
        for block in range(1, schedule.total_blocks + 1):
            view = schedule.view(block)
            prev = None
            for n in range(len(body) + 1):
                attention = scorer.step((SOS,) + body[:n], view).attention.averaged
                if prev is not None:
                    assert back_jump_probability(attention, prev) < 0.5
                prev = attention

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swingintent import runexp, synth
from swingintent.runexp import EMPTY, TERMINAL, BaseOutState, MissingStateError, PAOutcome, PlayEvent

K, BB, HR = PAOutcome.Strikeout, PAOutcome.Walk, PAOutcome.HomeRun


def inning(iid, outcomes, start=EMPTY):
    state, out = start, []
    for seq, o in enumerate(outcomes):
        post, runs, stranded = synth.advance(state, o)
        out.append(PlayEvent(iid, seq, state, post, runs, o, f"{iid}-{seq}", stranded))
        state = post
    return out


def test_states():
    assert len(runexp.all_states()) == 24
    assert BaseOutState(3, True, False, True) == TERMINAL
    s = BaseOutState(1, True, False, True)
    assert s.label == "1-3 1" and BaseOutState.from_label(s.label) == s
    with pytest.raises(ValueError):
        BaseOutState(4)


def test_terminal_is_zero():
    re = runexp.compute_re24(inning("a", [K, K, K]))
    assert re[TERMINAL] == 0.0


def test_leadoff_homer_then_three_strikeouts():
    evs = inning("a", [HR, K, K, K])
    innings, report = runexp.group_innings(evs)
    first = innings["a"][0]
    assert first.pre == EMPTY and first.runs_to_end == 1
    # every-visit averages the leadoff sample (1) with the post-homer one (0)
    assert runexp.compute_re24(evs)[EMPTY] == 0.5
    assert runexp.compute_re24(evs, visits="first")[EMPTY] == 1.0


def test_missing_state():
    re = runexp.compute_re24(inning("a", [K, K, K]))
    with pytest.raises(MissingStateError):
        re[BaseOutState(0, True)]
    assert len(re.missing()) == 21
    with pytest.warns(UserWarning):
        assert re.filled()[BaseOutState(0, True)] == 0.0


def test_delta_re_examples():
    re = runexp.RE24({BaseOutState(1): 0.27, BaseOutState(1, True, True, True): 1.6}, {})
    same = PlayEvent("x", 0, BaseOutState(1), BaseOutState(1), 0, PAOutcome.Other)
    assert runexp.delta_re(same, re) == 0.0
    slam = PlayEvent("x", 0, BaseOutState(1, True, True, True), BaseOutState(1), 4, HR)
    assert runexp.delta_re(slam, re) == pytest.approx(4 + 0.27 - 1.6, abs=1e-15)


def test_walk_only_from_empty():
    # walks always lead off and never score
    evs = inning("a", [BB, K, K, K]) + inning("b", [K, K, K]) + inning("c", [K, BB, K, K])
    evs = [e for e in evs if e.inning_id != "c"] + inning("d", [BB, HR, K, K, K])
    innings, _ = runexp.group_innings(evs)
    re = runexp.compute_re24(innings)
    lw = runexp.linear_weights(innings, re)
    assert lw[BB] == pytest.approx(re[BaseOutState(0, True)] - re[EMPTY], abs=1e-15)


def test_hand_traced_league():
    # innings: [BB K K K], [K K K], [HR K K K]
    evs = inning("a", [BB, K, K, K]) + inning("b", [K, K, K]) + inning("c", [HR, K, K, K])
    re = runexp.compute_re24(evs)
    # empty,0 visited 4 times with runs-to-end 0, 0, 1, 0
    assert re[EMPTY] == pytest.approx(0.25, abs=1e-12)
    assert re[BaseOutState(0, True)] == 0.0
    assert re[BaseOutState(1)] == 0.0
    lw = runexp.linear_weights(evs, re)
    assert lw[HR] == pytest.approx(1.0, abs=1e-12)
    assert lw[BB] == pytest.approx(-0.25, abs=1e-12)
    # K: from empty,0 (x2, each -0.25), the rest 0; 8 strikeouts in total
    assert lw[K] == pytest.approx(-0.5 / 9, abs=1e-12)
    assert lw.counts[K] == 9


def test_incomplete_innings_dropped():
    good = inning("a", [K, K, K])
    partial = inning("b", [K, K])
    gap = [e for e in inning("c", [K, K, K]) if e.seq != 1]
    broken = inning("d", [K, K, K])
    broken[1] = PlayEvent("d", 1, broken[1].pre, broken[1].post, 1, K)
    innings, report = runexp.group_innings(good + partial + gap + broken)
    assert list(innings) == ["a"]
    assert report.n_dropped == 3
    assert "three outs" in report.dropped["b"]
    assert "runner accounting" in report.dropped["d"]


def test_non_pa_events_excluded_from_lw():
    steal = PlayEvent("s", 1, BaseOutState(0, True), BaseOutState(0, False, True), 0, PAOutcome.Other)
    evs = inning("s", [BB])
    state = steal.post
    evs.append(steal)
    for seq, o in enumerate([K, K, K], start=2):
        post, runs, stranded = synth.advance(state, o)
        evs.append(PlayEvent("s", seq, state, post, runs, o, None, stranded))
        state = post
    innings, report = runexp.group_innings(evs)
    assert report.n_dropped == 0
    lw = runexp.linear_weights(innings, runexp.compute_re24(innings))
    assert PAOutcome.Other not in lw
    assert lw.counts[K] == 3


def test_event_log_round_trip(tmp_path):
    evs = synth.gen_playbyplay(synth.PlayByPlaySpec(
        (("Single", 0.2), ("Walk", 0.1), ("Double", 0.05), ("OutInPlay", 0.45), ("Strikeout", 0.2)), 200, seed=3))
    f = tmp_path / "events.csv"
    runexp.write_events(evs, f)
    assert runexp.read_events(f) == evs
    innings, report = runexp.load_events(f)
    assert report.n_dropped == 0 and len(innings) == 200


def test_re24_invariant_to_file_order():
    evs = synth.gen_playbyplay(synth.PlayByPlaySpec((("Single", 0.3), ("Strikeout", 0.7)), 300, seed=1))
    shuffled = evs[:]
    random.Random(0).shuffle(shuffled)
    a, b = runexp.compute_re24(evs), runexp.compute_re24(shuffled)
    assert a.values == b.values


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_conservation_every_inning(seed):
    evs = synth.gen_playbyplay(synth.PlayByPlaySpec(
        (("Single", 0.15), ("Double", 0.05), ("Triple", 0.01), ("HomeRun", 0.04), ("Walk", 0.1),
         ("HitByPitch", 0.01), ("OutInPlay", 0.44), ("Strikeout", 0.2)), 150, seed=seed))
    innings, report = runexp.group_innings(evs)
    assert report.n_dropped == 0
    re = runexp.compute_re24(innings)
    for evs_i in innings.values():
        lhs, rhs = runexp.inning_conservation(evs_i, re)
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_lw_equals_groupby_mean():
    evs = synth.gen_playbyplay(synth.PlayByPlaySpec((("Single", 0.25), ("Walk", 0.1), ("Strikeout", 0.65)), 500))
    innings, _ = runexp.group_innings(evs)
    re = runexp.compute_re24(innings)
    lw = runexp.linear_weights(innings, re)
    groups = {}
    for e in (e for v in innings.values() for e in v):
        groups.setdefault((e.outcome, e.pre), []).append(runexp.delta_re(e, re))
    for o in lw.runs:
        cells = [(len(v), np.mean(v)) for (oo, _), v in groups.items() if oo is o]
        assert lw[o] == pytest.approx(sum(n * m for n, m in cells) / sum(n for n, _ in cells), abs=1e-12)


def test_all_strikeout_league():
    evs = synth.gen_playbyplay(synth.PlayByPlaySpec((("Strikeout", 1.0),), 50))
    re = runexp.compute_re24(evs)
    assert all(v == 0.0 for v in re.values.values())
    assert runexp.linear_weights(evs, re)[K] == 0.0


def test_two_outcome_closed_form():
    p = 0.05
    evs = synth.gen_playbyplay(synth.PlayByPlaySpec((("HomeRun", p), ("Strikeout", 1 - p)), 20_000, seed=2))
    re = runexp.compute_re24(evs)
    exact, _ = synth.table_run_expectancy({"HomeRun": p, "Strikeout": 1 - p})
    assert exact[EMPTY] == pytest.approx(3 * p / (1 - p), rel=1e-12)
    assert re[EMPTY] == pytest.approx(exact[EMPTY], abs=0.02)


def test_table_solver_linear_weights():
    probs = {"Single": 0.25, "Walk": 0.1, "Strikeout": 0.65}
    exact_re, exact_lw = synth.table_run_expectancy(probs)
    evs = synth.gen_playbyplay(synth.PlayByPlaySpec(tuple(probs.items()), 30_000, seed=4))
    re = runexp.compute_re24(evs)
    lw = runexp.linear_weights(evs, re)
    assert re[EMPTY] == pytest.approx(exact_re[EMPTY], abs=0.02)
    for o in (K, BB, PAOutcome.Single):
        assert lw[o] == pytest.approx(exact_lw[o], abs=0.02)


def test_defaults_and_json():
    d = runexp.DEFAULT_LINEAR_WEIGHTS
    assert (d[K], d[BB], d[PAOutcome.HitByPitch]) == (-0.27, 0.33, 0.36)
    with pytest.warns(UserWarning):
        filled = runexp.LinearWeights({HR: 1.4}).with_defaults()
    assert filled[K] == -0.27 and filled[HR] == 1.4
    assert runexp.LinearWeights.from_json(filled.to_json()).runs == filled.runs
    re = runexp.compute_re24(inning("a", [HR, K, K, K]))
    assert runexp.RE24.from_json(re.to_json()).values == re.values
    assert re.table().shape == (8, 3)


def test_spec_validation():
    with pytest.raises(ValueError):
        synth.PlayByPlaySpec((("HomeRun", 1.0),)).table()
    with pytest.raises(ValueError):
        synth.PlayByPlaySpec((("HomeRun", 0.5), ("Strikeout", 0.4))).table()

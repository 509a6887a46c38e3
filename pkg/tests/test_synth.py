import numpy as np
import pytest
from scipy import stats

from swingintent import gbm, ingest, runexp, synth


def test_zero_batter_sd_gives_zero_intercepts():
    t = synth.IntentionTruth(sd_b=(0.0, 0.0, 0.0, 0.0))
    s = synth.gen_intention_data(synth.IntentionWorld(truth=t, n_batters=20, swings_per_batter=5))
    assert np.all(s.truth["gamma_b"] == 0.0)


def test_gaussian_case_has_no_skew():
    t = synth.IntentionTruth(alpha0=0.0, tau=0.0, sd_b=(0.0, 0.0, 0.0, 0.0), sd_p=0.0)
    s = synth.gen_intention_data(synth.IntentionWorld(truth=t, n_batters=100, swings_per_batter=1000, seed=1))
    resid = s.data.y - s.truth["mu"]
    assert abs(stats.skew(resid)) < 0.05


def test_marginal_variance_matches_total_variance_law():
    world = synth.IntentionWorld(n_batters=1000, swings_per_batter=100, seed=2)
    s = synth.gen_intention_data(world)
    assert np.var(s.data.y) == pytest.approx(synth.intention_variance(world), rel=0.02)


def test_intention_generator_is_deterministic():
    a = synth.gen_intention_data(synth.IntentionWorld(n_batters=5, swings_per_batter=10, seed=3))
    b = synth.gen_intention_data(synth.IntentionWorld(n_batters=5, swings_per_batter=10, seed=3))
    assert a.observations == b.observations


def test_pa_world_files_byte_identical(tmp_path):
    paths = []
    for k in range(2):
        w = synth.gen_pa_world(synth.PAWorldSpec(n_batters=20, swings_per_batter=20, pool_size=500, seed=4))
        p = tmp_path / f"swings{k}.csv"
        w.swings.to_csv(p, index=False)
        w.predictions.to_csv(tmp_path / f"pred{k}.csv", index=False)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "pred0.csv").read_bytes() == (tmp_path / "pred1.csv").read_bytes()


@pytest.fixture(scope="module")
def league():
    return synth.gen_league(synth.LeagueSpec(n_batters=15, n_pitchers=10, n_team_games=30, seed=5))


def test_league_innings_complete_and_conserved(league):
    innings, report = runexp.group_innings(league.events)
    assert report.n_dropped == 0
    assert len(innings) == 30 * 9
    re = runexp.compute_re24(innings)
    for evs in innings.values():
        lhs, rhs = runexp.inning_conservation(evs, re)
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_league_pitches_link_to_events(league):
    ids = {e.event_id for e in league.events}
    assert {r.pa_event_id for r in league.records} == ids
    # every PA ends on its last pitch; fair-ball PAs end with the fair ball
    last = {}
    for r in league.records:
        last[r.pa_event_id] = r
    kinds = {e.event_id: e.outcome for e in league.events}
    for eid, r in last.items():
        if r.outcome is ingest.Outcome.FairBall:
            assert kinds[eid] in (runexp.PAOutcome.Single, runexp.PAOutcome.Double, runexp.PAOutcome.Triple,
                                  runexp.PAOutcome.HomeRun, runexp.PAOutcome.OutInPlay)
            assert gbm.has_batted_ball(r)
        elif r.outcome is ingest.Outcome.HBP:
            assert kinds[eid] is runexp.PAOutcome.HitByPitch


def test_league_counts_are_reachable(league):
    for r in league.records:
        assert 0 <= r.balls <= 3 and 0 <= r.strikes <= 2
        assert r.is_swing == (r.bat_speed is not None)


def test_league_round_trips_through_files(league, tmp_path):
    ingest.write_pitch_csv(league.records, tmp_path / "p.csv", comment="seed=5")
    runexp.write_events(league.events, tmp_path / "e.csv", comment="seed=5")
    records, report = ingest.parse_pitch_csv(tmp_path / "p.csv")
    assert report.n_dropped == 0 and records == league.records
    assert runexp.read_events(tmp_path / "e.csv") == league.events


def test_league_is_deterministic(league):
    again = synth.gen_league(synth.LeagueSpec(n_batters=15, n_pitchers=10, n_team_games=30, seed=5))
    assert again.records == league.records and again.events == league.events


def test_batted_ball_results_favor_hard_contact():
    rng = np.random.default_rng(0)
    soft = synth.batted_ball_result(np.full(20000, 70.0), np.full(20000, 25.0), rng)
    hard = synth.batted_ball_result(np.full(20000, 108.0), np.full(20000, 25.0), rng)
    assert np.mean(hard == "HomeRun") > 0.3 > np.mean(soft == "HomeRun")
    assert np.mean(soft == "OutInPlay") > np.mean(hard == "OutInPlay")

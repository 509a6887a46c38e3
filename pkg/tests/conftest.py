import pytest

from swingintent.ingest import Outcome, PitchRecord


def make_record(**kw) -> PitchRecord:
    base = dict(
        game_id="g1", batter_id="b1", pitcher_id="p1", batter_side="R", pitcher_side="R",
        balls=0, strikes=0, pitch_type="FF", plate_x=0.1, plate_z=2.5,
        vel_at_plate=(5.0, -125.0, -6.0), acc_at_plate=(-10.0, 28.0, -15.0),
        extension=6.4, sz_top=3.4, sz_bot=1.6, outcome=Outcome.FairBall,
        bat_speed=72.0, swing_length=7.4, exit_speed=95.0, launch_angle=15.0,
    )
    base.update(kw)
    if base["outcome"] not in (Outcome.SwingingStrike, Outcome.FoulBall, Outcome.FairBall) and "bat_speed" not in kw:
        base["bat_speed"] = base["swing_length"] = base["exit_speed"] = base["launch_angle"] = None
    return PitchRecord(**base)


@pytest.fixture
def record_factory():
    return make_record


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])

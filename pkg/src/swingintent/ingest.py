"""Pitch-level ingestion, cleaning rules, and the intention dataset.

Column dictionary of the canonical pitch file (comma-separated, UTF-8,
header row).  Required columns:

=============  ===============================================================
game_id        opaque id
batter_id      opaque id
pitcher_id     opaque id
batter_side    ``L`` / ``R``
pitcher_side   ``L`` / ``R``
balls          0-3, count before the pitch
strikes        0-2, count before the pitch
pitch_type     pitch code (``FF`` four-seam, ``SI`` sinker, ``FC`` cutter, ...)
plate_x        ft, catcher's view, positive = catcher's right (first-base side)
plate_z        ft above ground
vx, vy, vz     velocity at the plate, ft/s
ax, ay, az     acceleration at the plate, ft/s^2
extension      release extension, ft
sz_top         top of the batter's strike zone, ft
sz_bot         bottom of the batter's strike zone, ft
outcome        canonical name (``FairBall`` ...) or a pitch-description code
               such as ``swinging_strike`` (see ``OUTCOME_CODES``)
=============  ===============================================================

Optional columns (blank = absent): ``bat_speed`` (mph), ``swing_length``
(ft), ``exit_speed`` (mph), ``launch_angle`` (deg), ``hit_x``, ``hit_y``
(hit coordinates), ``pa_event_id`` (links a pitch to its play-by-play event).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

MIN_FULL_SWING_MPH = 50.0
SQUARED_UP_FRACTION = 0.8
FT_PER_S_TO_MPH = 3600.0 / 5280.0
FASTBALL_FAMILY = ("FF", "SI", "FC")  # order is the tie-break


class IngestError(Exception):
    """Fatal ingestion problem (unreadable file, missing header columns)."""


class Outcome(str, Enum):
    HBP = "HBP"
    CalledBall = "CalledBall"
    CalledStrike = "CalledStrike"
    SwingingStrike = "SwingingStrike"
    FoulBall = "FoulBall"
    FairBall = "FairBall"

    @property
    def is_swing(self) -> bool:
        return self in SWINGS


SWINGS = frozenset({Outcome.SwingingStrike, Outcome.FoulBall, Outcome.FairBall})

OUTCOME_CODES = {o.value.lower(): o for o in Outcome}
OUTCOME_CODES.update({
    "hit_by_pitch": Outcome.HBP,
    "ball": Outcome.CalledBall,
    "blocked_ball": Outcome.CalledBall,
    "intent_ball": Outcome.CalledBall,
    "pitchout": Outcome.CalledBall,
    "called_strike": Outcome.CalledStrike,
    "swinging_strike": Outcome.SwingingStrike,
    "swinging_strike_blocked": Outcome.SwingingStrike,
    "foul_tip": Outcome.SwingingStrike,
    "missed_bunt": Outcome.SwingingStrike,
    "bunt_foul_tip": Outcome.SwingingStrike,
    "foul": Outcome.FoulBall,
    "foul_bunt": Outcome.FoulBall,
    "hit_into_play": Outcome.FairBall,
})


@dataclass(frozen=True, slots=True)
class PitchRecord:
    game_id: str
    batter_id: str
    pitcher_id: str
    batter_side: str
    pitcher_side: str
    balls: int
    strikes: int
    pitch_type: str
    plate_x: float
    plate_z: float
    vel_at_plate: tuple
    acc_at_plate: tuple
    extension: float
    sz_top: float
    sz_bot: float
    outcome: Outcome
    bat_speed: float | None = None
    swing_length: float | None = None
    exit_speed: float | None = None
    launch_angle: float | None = None
    hit_x: float | None = None
    hit_y: float | None = None
    pa_event_id: str | None = None

    @property
    def pitch_speed_mph(self) -> float:
        """Speed at the plate, used as the pitch speed at contact."""
        return math.sqrt(sum(v * v for v in self.vel_at_plate)) * FT_PER_S_TO_MPH

    @property
    def is_swing(self) -> bool:
        return self.outcome in SWINGS


@dataclass(frozen=True, slots=True)
class IntentionObservation:
    batter_id: str
    pitcher_id: str
    response: float
    balls: int
    strikes: int
    loc_x: float
    loc_z: float
    pitch_index: int | None = None


@dataclass
class DropReport:
    n_rows: int = 0
    n_kept: int = 0
    dropped: list = field(default_factory=list)  # {"row": i, "reason": ...}

    @property
    def n_dropped(self) -> int:
        return len(self.dropped)

    @property
    def rows(self) -> list:
        return [d["row"] for d in self.dropped]

    def add(self, row: int, reason: str):
        self.dropped.append({"row": row, "reason": reason})

    def to_json(self, path=None) -> str:
        reasons = Counter(d["reason"].split(":")[0] for d in self.dropped)
        text = json.dumps(
            {"n_rows": self.n_rows, "n_kept": self.n_kept, "n_dropped": self.n_dropped,
             "by_reason": dict(sorted(reasons.items())), "dropped": self.dropped},
            indent=2,
        )
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


REQUIRED_COLUMNS = (
    "game_id", "batter_id", "pitcher_id", "batter_side", "pitcher_side",
    "balls", "strikes", "pitch_type", "plate_x", "plate_z",
    "vx", "vy", "vz", "ax", "ay", "az", "extension", "sz_top", "sz_bot", "outcome",
)
OPTIONAL_COLUMNS = (
    "bat_speed", "swing_length", "exit_speed", "launch_angle", "hit_x", "hit_y", "pa_event_id",
)
CANONICAL_COLUMNS = REQUIRED_COLUMNS + OPTIONAL_COLUMNS


def _opt_float(value: str | None):
    if value is None:
        return None
    value = value.strip()
    if value == "" or value.upper() in ("NA", "NAN", "NULL"):
        return None
    return float(value)


def _parse_row(row: Mapping[str, str]) -> PitchRecord:
    missing = [c for c in REQUIRED_COLUMNS if (row.get(c) or "").strip() in ("", "NA")]
    if missing:
        raise ValueError(f"missing: {','.join(missing)}")
    code = row["outcome"].strip()
    outcome = OUTCOME_CODES.get(code.lower())
    if outcome is None:
        raise ValueError(f"unknown outcome: {code}")
    balls, strikes = int(row["balls"]), int(row["strikes"])
    if not (0 <= balls <= 3 and 0 <= strikes <= 2):
        raise ValueError(f"invalid count: {balls}-{strikes}")
    sides = row["batter_side"].strip().upper(), row["pitcher_side"].strip().upper()
    if any(s not in ("L", "R") for s in sides):
        raise ValueError(f"invalid side: {sides}")
    sz_top, sz_bot = float(row["sz_top"]), float(row["sz_bot"])
    if not sz_top > sz_bot > 0:
        raise ValueError(f"invalid strike zone: {sz_top}/{sz_bot}")
    bat_speed = _opt_float(row.get("bat_speed"))
    if bat_speed is not None and outcome not in SWINGS:
        raise ValueError("invalid swing fields: bat_speed on a non-swing")
    pa = (row.get("pa_event_id") or "").strip()
    return PitchRecord(
        game_id=row["game_id"].strip(),
        batter_id=row["batter_id"].strip(),
        pitcher_id=row["pitcher_id"].strip(),
        batter_side=sides[0],
        pitcher_side=sides[1],
        balls=balls,
        strikes=strikes,
        pitch_type=row["pitch_type"].strip().upper(),
        plate_x=float(row["plate_x"]),
        plate_z=float(row["plate_z"]),
        vel_at_plate=(float(row["vx"]), float(row["vy"]), float(row["vz"])),
        acc_at_plate=(float(row["ax"]), float(row["ay"]), float(row["az"])),
        extension=float(row["extension"]),
        sz_top=sz_top,
        sz_bot=sz_bot,
        outcome=outcome,
        bat_speed=bat_speed,
        swing_length=_opt_float(row.get("swing_length")),
        exit_speed=_opt_float(row.get("exit_speed")),
        launch_angle=_opt_float(row.get("launch_angle")),
        hit_x=_opt_float(row.get("hit_x")),
        hit_y=_opt_float(row.get("hit_y")),
        pa_event_id=pa or None,
    )


def parse_pitch_csv(path, column_map: Mapping[str, str] | None = None):
    """Read a pitch file into :class:`PitchRecord` objects.

    Parameters
    ----------
    path : path-like
        Delimited file with a header row.
    column_map : mapping, optional
        ``{canonical_name: source_column}`` renames applied before parsing.

    Returns
    -------
    records : list of PitchRecord
    report : DropReport
        Rows that were malformed, missing required fields, or carried an
        unknown outcome code (data rows are numbered from 0).
    """
    column_map = dict(column_map or {})
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    records, report = [], DropReport()
    with fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        header = set(reader.fieldnames or ())
        inverse = {src: canon for canon, src in column_map.items()}
        present = {inverse.get(h, h) for h in header}
        absent = [c for c in REQUIRED_COLUMNS if c not in present]
        if absent:
            raise IngestError(f"{path}: header lacks required columns {absent}")
        for i, raw in enumerate(reader):
            report.n_rows += 1
            row = {inverse.get(k, k): v for k, v in raw.items() if k is not None}
            try:
                records.append(_parse_row(row))
            except (ValueError, TypeError) as exc:
                report.add(i, str(exc))
    report.n_kept = len(records)
    if report.n_dropped:
        logger.info("dropped %d of %d rows from %s", report.n_dropped, report.n_rows, path)
    return records, report


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_pitch_csv(records: Iterable[PitchRecord], path, comment: str | None = None):
    """Write records in the canonical column layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        for r in records:
            w.writerow([
                r.game_id, r.batter_id, r.pitcher_id, r.batter_side, r.pitcher_side,
                r.balls, r.strikes, r.pitch_type, _fmt(r.plate_x), _fmt(r.plate_z),
                *map(_fmt, r.vel_at_plate), *map(_fmt, r.acc_at_plate),
                _fmt(r.extension), _fmt(r.sz_top), _fmt(r.sz_bot), r.outcome.value,
                _fmt(r.bat_speed), _fmt(r.swing_length), _fmt(r.exit_speed),
                _fmt(r.launch_angle), _fmt(r.hit_x), _fmt(r.hit_y), _fmt(r.pa_event_id),
            ])


def records_to_frame(records: Iterable[PitchRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        d = {f.name: getattr(r, f.name) for f in fields(PitchRecord)}
        d["vx"], d["vy"], d["vz"] = d.pop("vel_at_plate")
        d["ax"], d["ay"], d["az"] = d.pop("acc_at_plate")
        d["outcome"] = r.outcome.value
        rows.append(d)
    df = pd.DataFrame(rows, columns=list(CANONICAL_COLUMNS))
    for c in ("bat_speed", "swing_length", "exit_speed", "launch_angle", "hit_x", "hit_y"):
        df[c] = df[c].astype(float)
    return df


# --- cleaning rules ------------------------------------------------------------


def filter_full_swings(records: Iterable[PitchRecord], min_bat_speed: float = MIN_FULL_SWING_MPH):
    """Keep swings with a tracked bat speed of at least ``min_bat_speed`` mph."""
    return [r for r in records if r.bat_speed is not None and r.bat_speed >= min_bat_speed]


def squared_up_threshold(bat_speed: float, pitch_speed: float) -> float:
    return SQUARED_UP_FRACTION * (1.23 * bat_speed + 0.23 * pitch_speed)


def is_squared_up(bat_speed: float, pitch_speed_at_contact: float, exit_speed: float) -> bool:
    """Exit speed strictly above 80% of the approximate maximum exit speed."""
    if not (bat_speed > 0 and pitch_speed_at_contact > 0 and exit_speed > 0):
        raise ValueError("speeds must be positive")
    return exit_speed > squared_up_threshold(bat_speed, pitch_speed_at_contact)


def primary_fastball_type(pitches) -> str | None:
    """Most frequent fastball-family pitch type, or ``None`` if there is none.

    ``pitches`` is either an iterable of :class:`PitchRecord` for one pitcher
    or a mapping ``{pitch_type: count}``.  Ties go to the earlier entry of
    ``FASTBALL_FAMILY`` (four-seam, then sinker, then cutter).
    """
    if isinstance(pitches, Mapping):
        counts = Counter({k: int(v) for k, v in pitches.items()})
    else:
        counts = Counter(p.pitch_type for p in pitches)
    best, best_n = None, 0
    for code in FASTBALL_FAMILY:
        if counts.get(code, 0) > best_n:
            best, best_n = code, counts[code]
    return best


def primary_fastballs(records: Iterable[PitchRecord]) -> dict:
    """``{pitcher_id: primary fastball code}``; pitchers without one are omitted."""
    by_pitcher: dict = {}
    for r in records:
        by_pitcher.setdefault(r.pitcher_id, Counter())[r.pitch_type] += 1
    out = {}
    for pid, counts in by_pitcher.items():
        code = primary_fastball_type(counts)
        if code is not None:
            out[pid] = code
    return out


def mirror_loc_x(plate_x: float, batter_side: str) -> float:
    """Batter-relative horizontal location, positive = away from the batter.

    With ``plate_x`` positive toward the first-base side, a right-handed
    batter's away side is positive and a left-handed batter's is negative.
    """
    side = batter_side.upper()
    if side == "R":
        return plate_x
    if side == "L":
        return -plate_x
    raise ValueError(f"batter_side must be L or R, got {batter_side!r}")


def squared_up_record(r: PitchRecord) -> bool:
    if r.bat_speed is None or r.exit_speed is None or r.exit_speed <= 0 or r.bat_speed <= 0:
        return False
    return is_squared_up(r.bat_speed, r.pitch_speed_mph, r.exit_speed)


def build_intention_dataset(records, all_pitches=None, primary=None):
    """Intention-model observations from full swings.

    Keeps contact swings (foul or fair) that were squared up against the
    pitcher's primary fastball.

    Parameters
    ----------
    records : sequence of PitchRecord
        Output of :func:`filter_full_swings`.
    all_pitches : sequence of PitchRecord, optional
        Sample used to determine each pitcher's primary fastball.  Defaults
        to ``records``.
    primary : dict, optional
        Precomputed ``{pitcher_id: code}``; overrides ``all_pitches``.

    Returns
    -------
    bat_speed_obs, swing_length_obs : list of IntentionObservation
    """
    records = list(records)
    if primary is None:
        primary = primary_fastballs(records if all_pitches is None else all_pitches)
    bs, sl = [], []
    for i, r in enumerate(records):
        if r.outcome not in (Outcome.FoulBall, Outcome.FairBall):
            continue
        if primary.get(r.pitcher_id) != r.pitch_type:
            continue
        if not squared_up_record(r):
            continue
        loc_x = mirror_loc_x(r.plate_x, r.batter_side)
        common = dict(batter_id=r.batter_id, pitcher_id=r.pitcher_id, balls=r.balls,
                      strikes=r.strikes, loc_x=loc_x, loc_z=r.plate_z, pitch_index=i)
        bs.append(IntentionObservation(response=r.bat_speed, **common))
        if r.swing_length is not None and r.swing_length > 0:
            sl.append(IntentionObservation(response=r.swing_length, **common))
    return bs, sl


def observations_to_frame(obs) -> pd.DataFrame:
    return pd.DataFrame([asdict(o) for o in obs], columns=[f.name for f in fields(IntentionObservation)])


def frame_to_observations(df: pd.DataFrame) -> list:
    out = []
    for row in df.itertuples(index=False):
        out.append(IntentionObservation(
            batter_id=str(row.batter_id), pitcher_id=str(row.pitcher_id), response=float(row.response),
            balls=int(row.balls), strikes=int(row.strikes), loc_x=float(row.loc_x), loc_z=float(row.loc_z),
            pitch_index=None if pd.isna(row.pitch_index) else int(row.pitch_index),
        ))
    return out


def feature_matrix(records) -> np.ndarray:
    """The 14 pitch-outcome features per record (see ``PITCH_FEATURES``)."""
    return np.array([
        [r.balls, r.strikes, 1.0 if r.batter_side == "R" else 0.0, r.sz_top, r.sz_bot,
         r.plate_x, r.plate_z, *r.vel_at_plate, *r.acc_at_plate, r.extension]
        for r in records
    ], dtype=float).reshape(-1, 14)


PITCH_FEATURES = (
    "balls", "strikes", "batter_side_r", "sz_top", "sz_bot",
    "plate_x", "plate_z", "vx", "vy", "vz", "ax", "ay", "az", "extension",
)

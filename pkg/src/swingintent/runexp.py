"""Base-out run expectancy (RE24) and linear weights from play-by-play logs.

Event log columns (one row per play, CSV):

``inning_id, seq, pre_outs, pre_1b, pre_2b, pre_3b, post_outs, post_1b,
post_2b, post_3b, runs, event, event_id``

Runner flags are 0/1, ``runs`` counts runs scored on the play and ``event`` is
a :class:`PAOutcome` name.  ``event_id`` links a plate-appearance ending event
to its pitches and may be blank.  Rows of one inning may appear in any order;
``seq`` orders them.

An inning is kept only if it is complete: consecutive ``seq``, each play
starting in the state the previous play ended in, the last play reaching
three outs, and runner accounting conserved on every play.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class PAOutcome(str, Enum):
    Strikeout = "Strikeout"
    Walk = "Walk"
    HitByPitch = "HitByPitch"
    Single = "Single"
    Double = "Double"
    Triple = "Triple"
    HomeRun = "HomeRun"
    OutInPlay = "OutInPlay"
    Other = "Other"  # steals, wild pitches and other non-PA plays


BATTER_EVENTS = frozenset(o for o in PAOutcome if o is not PAOutcome.Other)


class MissingStateError(KeyError):
    """A base-out state has no run expectancy estimate."""


@dataclass(frozen=True, order=True)
class BaseOutState:
    outs: int = 0
    first: bool = False
    second: bool = False
    third: bool = False

    def __post_init__(self):
        if not 0 <= self.outs <= 3:
            raise ValueError(f"outs must be 0-3, got {self.outs}")
        if self.outs == 3:
            # runners left on base do not distinguish terminal states
            for k in ("first", "second", "third"):
                object.__setattr__(self, k, False)

    @property
    def is_terminal(self) -> bool:
        return self.outs == 3

    @property
    def runners(self) -> int:
        return int(self.first) + int(self.second) + int(self.third)

    @property
    def label(self) -> str:
        bases = "".join(c if on else "-" for c, on in zip("123", (self.first, self.second, self.third)))
        return f"{bases} {self.outs}"

    @classmethod
    def from_label(cls, label: str) -> "BaseOutState":
        bases, outs = label.split()
        return cls(int(outs), bases[0] == "1", bases[1] == "2", bases[2] == "3")


TERMINAL = BaseOutState(3)
EMPTY = BaseOutState(0)


def all_states() -> list:
    """The 24 nonterminal states."""
    return [BaseOutState(o, a, b, c) for o in range(3) for a in (False, True) for b in (False, True) for c in (False, True)]


@dataclass(frozen=True)
class PlayEvent:
    inning_id: str
    seq: int
    pre: BaseOutState
    post: BaseOutState
    runs: int
    outcome: PAOutcome
    event_id: str | None = None
    stranded: int = 0  # runners left on base by a third-out play
    runs_to_end: int | None = None  # derived: runs from this play to the end of the inning

    @property
    def outs_made(self) -> int:
        return self.post.outs - self.pre.outs

    def conserved(self) -> bool:
        """Runners in (plus the batter on a PA) = runners after + stranded + scored + outs."""
        into = self.pre.runners + (self.outcome is not PAOutcome.Other)
        return into == self.post.runners + self.stranded + self.runs + self.outs_made


EVENT_COLUMNS = ("inning_id", "seq", "pre_outs", "pre_1b", "pre_2b", "pre_3b",
                 "post_outs", "post_1b", "post_2b", "post_3b", "runs", "event", "event_id")


def _state(row, prefix) -> tuple:
    return int(row[f"{prefix}_outs"]), int(row[f"{prefix}_1b"]), int(row[f"{prefix}_2b"]), int(row[f"{prefix}_3b"])


def read_events(path) -> list:
    """Parse an event log into :class:`PlayEvent` rows, in file order.

    Lines starting with ``#`` are comments.
    """
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = set(EVENT_COLUMNS[:-1]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"event log missing columns {sorted(missing)}")
        for row in reader:
            pre, post = _state(row, "pre"), _state(row, "post")
            stranded = sum(post[1:]) if post[0] == 3 else 0
            e = PlayEvent(
                row["inning_id"], int(row["seq"]), BaseOutState(pre[0], *map(bool, pre[1:])),
                BaseOutState(post[0], *map(bool, post[1:])), int(row["runs"]), PAOutcome(row["event"]),
                row.get("event_id") or None, stranded,
            )
            out.append(e)
    return out


def write_events(events, path, comment: str | None = None):
    """Write an event log; third-out plays record stranded runners in the post flags."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for e in events:
            post_flags = [int(e.post.first), int(e.post.second), int(e.post.third)]
            if e.post.is_terminal:
                post_flags = [1] * e.stranded + [0] * (3 - e.stranded)
            w.writerow([e.inning_id, e.seq, e.pre.outs, int(e.pre.first), int(e.pre.second), int(e.pre.third),
                        e.post.outs, *post_flags, e.runs, e.outcome.value, e.event_id or ""])


@dataclass
class InningReport:
    n_innings: int = 0
    dropped: dict = field(default_factory=dict)  # inning_id -> reason

    @property
    def n_dropped(self) -> int:
        return len(self.dropped)


def group_innings(events):
    """Complete innings sorted by ``seq`` with ``runs_to_end`` filled in.

    Returns
    -------
    innings : dict
        ``inning_id -> list of PlayEvent``, in sorted inning order.
    report : InningReport
    """
    by_inning: dict = {}
    for e in events:
        by_inning.setdefault(e.inning_id, []).append(e)
    innings, report = {}, InningReport()
    for iid in sorted(by_inning):
        evs = sorted(by_inning[iid], key=lambda e: e.seq)
        reason = _incomplete(evs)
        if reason:
            report.dropped[iid] = reason
            continue
        total = sum(e.runs for e in evs)
        acc, out = 0, []
        for e in evs:
            out.append(replace(e, runs_to_end=total - acc))
            acc += e.runs
        innings[iid] = out
    report.n_innings = len(innings)
    if report.n_dropped:
        logger.info("dropped %d incomplete innings", report.n_dropped)
    return innings, report


def _incomplete(evs) -> str | None:
    if [e.seq for e in evs] != list(range(evs[0].seq, evs[0].seq + len(evs))):
        return "non-consecutive seq"
    if not evs[-1].post.is_terminal:
        return "inning does not reach three outs"
    for a, b in zip(evs, evs[1:]):
        if a.post != b.pre:
            return f"state break at seq {b.seq}"
        if a.post.is_terminal:
            return f"play after third out at seq {b.seq}"
    for e in evs:
        if e.runs < 0 or e.outs_made < 0 or not e.conserved():
            return f"runner accounting broken at seq {e.seq}"
    return None


def load_events(path):
    """Read an event log and group it into complete innings."""
    return group_innings(read_events(path))


@dataclass
class RE24:
    """Run expectancy by base-out state; the terminal state is always 0."""

    values: dict
    counts: dict
    n_innings: int = 0

    def __getitem__(self, state: BaseOutState) -> float:
        if state.is_terminal:
            return 0.0
        try:
            return self.values[state]
        except KeyError:
            raise MissingStateError(f"no run expectancy for state {state.label}") from None

    def __contains__(self, state) -> bool:
        return state.is_terminal or state in self.values

    def missing(self) -> list:
        return [s for s in all_states() if s not in self.values]

    def filled(self) -> "RE24":
        """Copy with unobserved states set to 0 (warns)."""
        miss = self.missing()
        if miss:
            warnings.warn(f"{len(miss)} base-out states unobserved; using 0", stacklevel=2)
        return RE24({**{s: 0.0 for s in miss}, **self.values}, dict(self.counts), self.n_innings)

    def table(self) -> pd.DataFrame:
        """8 runner configurations by 3 out counts (NaN where unobserved)."""
        rows = {}
        for s in all_states():
            rows.setdefault(s.label.split()[0], {})[s.outs] = self.values.get(s, np.nan)
        return pd.DataFrame(rows).T[[0, 1, 2]]

    def to_json(self) -> str:
        return json.dumps({"n_innings": self.n_innings,
                           "values": {s.label: v for s, v in sorted(self.values.items())},
                           "counts": {s.label: c for s, c in sorted(self.counts.items())}}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "RE24":
        d = json.loads(text)
        return cls({BaseOutState.from_label(k): float(v) for k, v in d["values"].items()},
                   {BaseOutState.from_label(k): int(v) for k, v in d["counts"].items()}, int(d.get("n_innings", 0)))


def _innings(events):
    if isinstance(events, dict):
        return events
    return group_innings(events)[0]


def compute_re24(events, visits: str = "every") -> RE24:
    """Mean runs to the end of the inning from each base-out state.

    Parameters
    ----------
    events : dict of complete innings (from :func:`group_innings`) or an
        iterable of PlayEvent, which is grouped first.
    visits : {"every", "first"}
        ``"every"`` averages over all occurrences of a state; ``"first"``
        uses only the first occurrence within each inning.  Both estimate the
        same expectation under a Markov model.
    """
    if visits not in ("every", "first"):
        raise ValueError("visits must be 'every' or 'first'")
    sums: dict = {}
    counts: dict = {}
    innings = _innings(events)
    for evs in innings.values():
        seen = set()
        for e in evs:
            if visits == "first" and e.pre in seen:
                continue
            seen.add(e.pre)
            sums[e.pre] = sums.get(e.pre, 0.0) + e.runs_to_end
            counts[e.pre] = counts.get(e.pre, 0) + 1
    return RE24({s: sums[s] / counts[s] for s in sums}, counts, len(innings))


def delta_re(event: PlayEvent, re24: RE24) -> float:
    """RE(post) - RE(pre) + runs scored on the play."""
    return re24[event.post] - re24[event.pre] + event.runs


def inning_conservation(inning, re24: RE24) -> tuple:
    """``(sum of delta_re, inning runs - RE(initial state))``; equal by telescoping."""
    return sum(delta_re(e, re24) for e in inning), sum(e.runs for e in inning) - re24[inning[0].pre]


@dataclass
class LinearWeights:
    runs: dict
    counts: dict = field(default_factory=dict)

    def __getitem__(self, outcome) -> float:
        return self.runs[PAOutcome(outcome)]

    def __contains__(self, outcome) -> bool:
        return PAOutcome(outcome) in self.runs

    def with_defaults(self) -> "LinearWeights":
        """Fill the three non-contact outcomes from the default constants if absent."""
        runs = dict(self.runs)
        for k, v in DEFAULT_LINEAR_WEIGHTS.runs.items():
            if k not in runs:
                warnings.warn(f"no {k.value} events; using default {v}", stacklevel=2)
                runs[k] = v
        return LinearWeights(runs, dict(self.counts))

    def to_json(self) -> str:
        return json.dumps({"runs": {k.value: v for k, v in self.runs.items()},
                           "counts": {k.value: v for k, v in self.counts.items()}}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "LinearWeights":
        d = json.loads(text)
        return cls({PAOutcome(k): float(v) for k, v in d["runs"].items()},
                   {PAOutcome(k): int(v) for k, v in d.get("counts", {}).items()})


# league constants used when no play-by-play is supplied
DEFAULT_LINEAR_WEIGHTS = LinearWeights({
    PAOutcome.Strikeout: -0.27, PAOutcome.Walk: 0.33, PAOutcome.HitByPitch: 0.36,
})


def linear_weights(events, re24: RE24) -> LinearWeights:
    """Mean ``delta_re`` per plate-appearance outcome.  Non-PA plays are
    excluded; outcomes with no events are absent."""
    sums: dict = {}
    counts: dict = {}
    for evs in _innings(events).values():
        for e in evs:
            if e.outcome is PAOutcome.Other:
                continue
            sums[e.outcome] = sums.get(e.outcome, 0.0) + delta_re(e, re24)
            counts[e.outcome] = counts.get(e.outcome, 0) + 1
    order = [o for o in PAOutcome if o in sums]
    return LinearWeights({o: sums[o] / counts[o] for o in order}, {o: counts[o] for o in order})


def event_deltas(events, re24: RE24) -> dict:
    """``{event_id: delta_re}`` for events carrying an id."""
    return {e.event_id: delta_re(e, re24) for evs in _innings(events).values() for e in evs if e.event_id}

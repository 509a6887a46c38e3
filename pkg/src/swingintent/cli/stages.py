"""Pipeline stages.

Each stage reads upstream artifacts through the manifest, writes its own
files under the output directory and returns the list of paths written.
Every artifact carries the config hash and seed: CSV files in a leading
``#`` comment line, JSON files under a ``"run"`` key, draws files in their
header.
"""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .. import causal, gbm, ingest, pa_chain, runexp, synth
from ..hiermodel import (
    IntentionData,
    PosteriorDraws,
    SamplerConfig,
    batter_approaches,
    compare,
    diagnostics,
    elpd_heldout,
    sample_posterior,
    train_test_split,
)
from . import reference
from .config import config_hash, file_hash
from .manifest import Manifest

logger = logging.getLogger(__name__)

RESPONSES = ("bat_speed", "swing_length")
FIXED_ROWS = ("mu0", "beta_balls", "beta_strikes", "beta_x", "beta_z", "alpha0")
SD_ROWS = ("sd_p", "sd_b", "sd_b_strikes", "sd_b_x", "sd_b_z", "tau")
SWING_OUTCOMES = ("SwingingStrike", "FoulBall", "FairBall")


@dataclass
class Run:
    cfg: dict
    out: Path
    manifest: Manifest

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    @property
    def config_hash(self) -> str:
        return config_hash(self.cfg)

    @property
    def stamp(self) -> str:
        return f"config_hash={self.config_hash} seed={self.seed}"

    def stage_seed(self, stage: str) -> int:
        """Independent 32-bit seed per stage derived from the run seed."""
        tag = int.from_bytes(hashlib.sha256(stage.encode()).digest()[:4], "little")
        return int(np.random.SeedSequence([self.seed, tag]).generate_state(1)[0])

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    # --- stamped writers ------------------------------------------------------

    def write_csv(self, df: pd.DataFrame, *parts) -> Path:
        p = self.path(*parts)
        with open(p, "w", newline="") as fh:
            fh.write(f"# {self.stamp}\n")
            df.to_csv(fh, index=False, lineterminator="\n")
        return p

    def write_json(self, payload: dict, *parts) -> Path:
        p = self.path(*parts)
        body = {"run": {"config_hash": self.config_hash, "seed": self.seed}, **payload}
        p.write_text(json.dumps(body, indent=2, sort_keys=True, allow_nan=True) + "\n")
        return p


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", keep_default_na=True)


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


# --- stage implementations ------------------------------------------------------


def stage_synth(run: Run) -> list:
    s = run.cfg["synth"]
    spec = synth.LeagueSpec(n_batters=s["n_batters"], n_pitchers=s["n_pitchers"], n_team_games=s["n_team_games"],
                            seed=run.stage_seed("synth"))
    league = synth.gen_league(spec)
    pitches = run.path("synth", "pitches.csv")
    ingest.write_pitch_csv(league.records, pitches, comment=run.stamp)
    events = run.path("synth", "events.csv")
    runexp.write_events(league.events, events, comment=run.stamp)
    truth = run.write_json({"truth": synth.truth_summary(league)}, "synth", "truth.json")
    return [pitches, events, truth]


def _pitch_source(run: Run) -> Path:
    p = run.cfg["inputs"]["pitches"]
    return Path(p) if p else run.out / "synth" / "pitches.csv"


def _event_source(run: Run) -> Path:
    p = run.cfg["inputs"]["events"]
    return Path(p) if p else run.out / "synth" / "events.csv"


def stage_ingest(run: Run) -> list:
    records, report = ingest.parse_pitch_csv(_pitch_source(run), run.cfg["columns"])
    if not records:
        raise ValueError("no usable pitch rows")
    pitches = run.path("ingest", "pitches.csv")
    ingest.write_pitch_csv(records, pitches, comment=run.stamp)
    drops = run.write_json(json.loads(report.to_json()), "ingest", "drops.json")
    # pitch_index refers to the cleaned pitch file row
    full_idx = [i for i, r in enumerate(records) if r.bat_speed is not None and r.bat_speed >= ingest.MIN_FULL_SWING_MPH]
    full = [records[i] for i in full_idx]
    out = [pitches, drops]
    for resp, obs in zip(RESPONSES, ingest.build_intention_dataset(full, records)):
        df = ingest.observations_to_frame(obs)
        df["pitch_index"] = [full_idx[i] for i in df["pitch_index"]]
        out.append(run.write_csv(df, "ingest", f"intention_{resp}.csv"))
    return out


def stage_linear_weights(run: Run) -> list:
    innings, report = runexp.load_events(_event_source(run))
    if not innings:
        raise ValueError("event log holds no complete innings")
    re = runexp.compute_re24(innings)
    lw = runexp.linear_weights(innings, re)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lw_full = lw.with_defaults()
        re_full = re.filled()
    notes = [str(w.message) for w in caught]
    for n in notes:
        logger.warning(n)
    deltas = runexp.event_deltas(innings, re_full)
    table = re.table()
    table.columns = [f"outs_{c}" for c in table.columns]
    table.insert(0, "runners", table.index)
    return [
        run.write_json({"re24": json.loads(re.to_json()), "innings": {"kept": report.n_innings,
                        "dropped": report.dropped}, "notes": notes}, "linear_weights", "re24.json"),
        run.write_json({"linear_weights": json.loads(lw_full.to_json()),
                        "observed": json.loads(lw.to_json())}, "linear_weights", "linear_weights.json"),
        run.write_csv(table.reset_index(drop=True), "linear_weights", "re24_table.csv"),
        run.write_csv(pd.DataFrame({"event_id": list(deltas), "delta_re": list(deltas.values())}),
                      "linear_weights", "event_deltas.csv"),
    ]


def load_linear_weights(run: Run) -> runexp.LinearWeights:
    d = read_json(run.out / "linear_weights" / "linear_weights.json")
    return runexp.LinearWeights.from_json(json.dumps(d["linear_weights"]))


def load_records(run: Run) -> list:
    records, _ = ingest.parse_pitch_csv(run.out / "ingest" / "pitches.csv")
    return records


def _train_config(base: gbm.TrainConfig, *overrides, seed: int) -> gbm.TrainConfig:
    kw = {}
    for o in overrides:
        kw.update(o or {})
    return base.with_(**kw, seed=seed)


def stage_train_outcome(run: Run) -> list:
    records = load_records(run)
    deltas = read_csv(run.out / "linear_weights" / "event_deltas.csv")
    label = dict(zip(deltas["event_id"].astype(str), deltas["delta_re"]))
    batted = [i for i, r in enumerate(records)
              if r.outcome is ingest.Outcome.FairBall and gbm.has_batted_ball(r) and r.pa_event_id in label]
    if not batted:
        raise ValueError("no fair balls link to play-by-play events; cannot label the hit outcome model")
    g = run.cfg["gbm"]
    seed = run.stage_seed("train-outcome")
    hit_cfg = _train_config(gbm.HIT_OUTCOME_CONFIG, g["hit"], seed=seed)
    hit = gbm.train_hit_outcome([records[i] for i in batted], np.array([label[records[i].pa_event_id] for i in batted]),
                                hit_cfg)
    hit.meta.update(config_hash=run.config_hash, seed=run.seed)
    configs = {k: _train_config(c, g["pitch_all"], g["pitch"].get(k), seed=seed)
               for k, c in gbm.PITCH_OUTCOME_CONFIGS.items()}
    models = gbm.train_pitch_outcome(records, hit, configs, seed=seed)
    for ens in models.ensembles.values():
        ens.meta.update(config_hash=run.config_hash, seed=run.seed)
    hit_path = run.path("models", "hit.json")
    hit.save(hit_path)
    models.save(run.out / "models")
    pred = models.predictions(records)
    hit_xlw = np.full(len(records), np.nan)
    has = [i for i, r in enumerate(records) if r.outcome is ingest.Outcome.FairBall and gbm.has_batted_ball(r)]
    if has:
        hit_xlw[has] = hit.predict(gbm.hit_feature_matrix([records[i] for i in has]))
    pred["hit_xlw"] = hit_xlw
    imp = pd.DataFrame([{"model": k, "feature": f, "gain_share": v}
                        for k, e in [("hit", hit), *sorted(models.ensembles.items())]
                        for f, v in e.feature_importance().items()])
    return [hit_path, *[run.out / "models" / f"component_{k}.json" for k in gbm.COMPONENTS],
            run.write_csv(pred, "models", "predictions.csv"), run.write_csv(imp, "models", "importance.csv")]


def load_models(run: Run) -> gbm.PitchOutcomeModels:
    return gbm.PitchOutcomeModels.load(run.out / "models")


def _intention_data(run: Run, resp: str) -> IntentionData:
    obs = ingest.frame_to_observations(read_csv(run.out / "ingest" / f"intention_{resp}.csv"))
    if not obs:
        raise ValueError(f"empty {resp} intention dataset")
    return IntentionData.from_observations(obs)


def _sampler_config(run: Run, tag: str) -> SamplerConfig:
    s = run.cfg["sampler"]
    return SamplerConfig(chains=s["chains"], warmup=s["warmup"], draws=s["draws"], seed=run.stage_seed(tag),
                         target_accept=s["target_accept"], max_tree_depth=s["max_tree_depth"])


def stage_fit_intention(run: Run) -> list:
    out = []
    header = {"config_hash": run.config_hash, "seed": run.seed}
    for resp in RESPONSES:
        data = _intention_data(run, resp)
        train, test = train_test_split(data.n, run.cfg["sampler"]["test_fraction"], run.stage_seed(f"split-{resp}"))
        out.append(run.write_csv(pd.DataFrame({"index": test}), "intention", f"{resp}_heldout.csv"))
        fits = {
            "sk": (data, True),
            "sk_train": (data.subset(train), True),
            "gauss_train": (data.subset(train), False),
        }
        for variant, (d, skew) in fits.items():
            logger.info("sampling %s %s (n=%d)", resp, variant, d.n)
            draws = sample_posterior(d, _sampler_config(run, f"{resp}-{variant}"), skew=skew)
            p = run.path("intention", f"{resp}_{variant}.draws")
            draws.save(p, header_extra=header)
            out.append(p)
            if variant == "sk":
                diag = diagnostics(draws)
                out.append(run.write_csv(diag, "intention", f"{resp}_diagnostics.csv"))
    return out


def load_draws(run: Run, resp: str, variant: str = "sk") -> PosteriorDraws:
    return PosteriorDraws.load(run.out / "intention" / f"{resp}_{variant}.draws")


def stage_elpd_compare(run: Run) -> list:
    rows = []
    for resp in RESPONSES:
        data = _intention_data(run, resp)
        test = read_csv(run.out / "intention" / f"{resp}_heldout.csv")["index"].to_numpy()
        held = data.subset(test)
        sk = elpd_heldout(load_draws(run, resp, "sk_train"), held)
        ga = elpd_heldout(load_draws(run, resp, "gauss_train"), held)
        c = compare(sk, ga)
        rows.append({"response": resp, "n_heldout": sk.n, "elpd_sk": sk.elpd, "se_sk": sk.se,
                     "elpd_gauss": ga.elpd, "se_gauss": ga.se, "delta_elpd": c.delta, "se": c.se,
                     "n_se": c.delta / c.se if c.se > 0 else float("nan")})
    return [run.write_csv(pd.DataFrame(rows), "intention", "elpd.csv")]


def stage_approaches(run: Run) -> list:
    bs, sl = load_draws(run, "bat_speed"), load_draws(run, "swing_length")
    appr = batter_approaches(bs, sl)
    df = pd.DataFrame([{"batter_id": a.batter_id, "gamma_bs": a.gamma_bs, "gamma_sl": a.gamma_sl} for a in appr])
    fixed = {"bat_speed": float(bs.samples["beta"][..., 1].mean()),
             "swing_length": float(sl.samples["beta"][..., 1].mean())}
    return [run.write_csv(df, "approaches", "approaches.csv"),
            run.write_json({"fixed_strikes": fixed}, "approaches", "fixed_strikes.json")]


def load_approaches(run: Run) -> pd.DataFrame:
    return read_csv(run.out / "approaches" / "approaches.csv").astype({"batter_id": str})


def stage_fit_causal(run: Run) -> list:
    records = load_records(run)
    pred = read_csv(run.out / "models" / "predictions.csv")
    rows = [i for i, r in enumerate(records) if r.outcome.value in SWING_OUTCOMES]
    swings = pd.DataFrame({
        "row_id": rows,
        "batter_id": [records[i].batter_id for i in rows],
        "outcome": [records[i].outcome.value for i in rows],
        "xlw": pred["hit_xlw"].to_numpy()[rows],
    })
    suite = causal.fit_causal_suite(swings, pred, load_approaches(run))
    return [run.write_json({"suite": json.loads(suite.to_json())}, "causal", "suite.json"),
            run.write_csv(suite.table(), "causal", "coefficients.csv")]


def load_suite(run: Run) -> causal.CausalSuite:
    return causal.CausalSuite.from_json(json.dumps(read_json(run.out / "causal" / "suite.json")["suite"]))


def _chain_inputs(run: Run):
    records = load_records(run)
    pool = pa_chain.PitchPool.build(ingest.feature_matrix(records), load_models(run))
    return pool, load_suite(run), load_linear_weights(run), load_approaches(run)


def _fixed_strikes(run: Run) -> tuple:
    f = read_json(run.out / "approaches" / "fixed_strikes.json")["fixed_strikes"]
    return f["bat_speed"], f["swing_length"]


def stage_run_value(run: Run) -> list:
    pool, fits, lw, appr = _chain_inputs(run)
    c = run.cfg["chain"]
    average = (float(appr["gamma_bs"].mean()), float(appr["gamma_sl"].mean()))
    grid = pa_chain.approach_grid(c["bs_range"], c["sl_range"], c["resolution"], pool, fits, lw, average)
    ranks = pa_chain.batter_rankings(appr, pool, fits, lw, _fixed_strikes(run))
    model = pa_chain.aggregate_transition(pool, average, fits, lw)
    vf = pa_chain.solve_bellman(model, tol=c["tol"])
    values = pd.DataFrame({"state": [f"{b}-{s}" for b, s in pa_chain.COUNTS],
                           "value": [vf[cnt] for cnt in pa_chain.COUNTS]})
    return [run.write_csv(grid, "value", "grid.csv"), run.write_csv(ranks, "value", "rankings.csv"),
            run.write_csv(values, "value", "average_values.csv"),
            run.write_json({"average": list(average), "transition": json.loads(model.to_json()),
                            "iterations": vf.iterations}, "value", "average_transition.json")]


def stage_simulate(run: Run) -> list:
    pool, fits, lw, appr = _chain_inputs(run)
    n = run.cfg["chain"]["simulate_n"]
    ranks = read_csv(run.out / "value" / "rankings.csv").astype({"batter": str})
    fixed = _fixed_strikes(run)
    cases = {"average": (float(appr["gamma_bs"].mean()), float(appr["gamma_sl"].mean()))}
    for label, row in (("best", ranks.iloc[0]), ("worst", ranks.iloc[-1])):
        cases[label] = (row["bat_speed_approach_mph"] - fixed[0], row["swing_length_approach_in"] / 12.0 - fixed[1])
    rows = []
    for k, (label, gamma) in enumerate(cases.items()):
        v = pa_chain.solve_bellman(pa_chain.aggregate_transition(pool, gamma, fits, lw))[(0, 0)]
        mean, se = pa_chain.simulate_pa(gamma, pool, fits, lw, n, seed=run.stage_seed(f"simulate-{k}"))
        rows.append({"case": label, "gamma_bs": gamma[0], "gamma_sl": gamma[1], "bellman": v, "mc_mean": mean,
                     "mc_se": se, "z": (mean - v) / se if se > 0 else 0.0, "n": n})
    return [run.write_csv(pd.DataFrame(rows), "value", "simulate.csv")]


def _interval_table(run: Run, names) -> pd.DataFrame:
    rows = {n: {"parameter": n} for n in names}
    for resp in RESPONSES:
        cols = load_draws(run, resp).scalar_columns()
        for n in names:
            if n not in cols:
                continue
            x = np.asarray(cols[n]).ravel()
            rows[n].update({f"{resp}_mean": x.mean(), f"{resp}_lower": np.quantile(x, 0.025),
                            f"{resp}_upper": np.quantile(x, 0.975), f"{resp}_sd": x.std(ddof=1)})
    return pd.DataFrame(list(rows.values()))


def recovery_checks(run: Run, fixed: pd.DataFrame) -> pd.DataFrame:
    """Estimates against the synthetic truth.

    Posterior means within 3 posterior sd of the generating fixed effects,
    estimated batter approaches positively correlated with the true ones,
    contact and fair coefficients within 3 SE, and the Monte Carlo check of
    the chain solver within 3 MC SE.
    """
    truth = read_json(run.out / "synth" / "truth.json")["truth"]
    rows = []
    for resp in RESPONSES:
        t = truth[resp]
        tv = {"mu0": t["mu0"], "alpha0": t["alpha0"],
              **dict(zip(("beta_balls", "beta_strikes", "beta_x", "beta_z"), t["beta"]))}
        for _, r in fixed.iterrows():
            est, sd = r[f"{resp}_mean"], r[f"{resp}_sd"]
            rows.append({"check": f"{resp}.{r['parameter']}", "estimate": est, "truth": tv[r["parameter"]],
                         "tolerance": 3 * sd, "passed": bool(abs(est - tv[r["parameter"]]) < 3 * sd)})
    appr = load_approaches(run)
    true_g = dict(zip(truth["batter_ids"], zip(truth["bat_speed"]["gamma_strikes"],
                                                truth["swing_length"]["gamma_strikes"])))
    tg = np.array([true_g[b] for b in appr["batter_id"]])
    for k, (resp, col) in enumerate((("bat_speed", "gamma_bs"), ("swing_length", "gamma_sl"))):
        rho = float(np.corrcoef(appr[col], tg[:, k])[0, 1])
        rows.append({"check": f"{resp}.approach_correlation", "estimate": rho, "truth": 1.0, "tolerance": 1.0,
                     "passed": bool(rho > 0)})
    suite = load_suite(run)
    for tag in ("contact", "fair"):
        f = suite[tag]
        for name, est, se, tv in zip(causal.COEF_NAMES[1:], f.coef[1:], f.se[1:], truth["causal"][tag][1:]):
            rows.append({"check": f"causal.{tag}.{name}", "estimate": est, "truth": tv, "tolerance": 3 * se,
                         "passed": bool(abs(est - tv) < 3 * se)})
    sim = read_csv(run.out / "value" / "simulate.csv")
    for _, r in sim.iterrows():
        rows.append({"check": f"chain.simulate.{r['case']}", "estimate": r["mc_mean"], "truth": r["bellman"],
                     "tolerance": 3 * r["mc_se"], "passed": bool(abs(r["z"]) < 3)})
    return pd.DataFrame(rows)


def reference_checks(fixed: pd.DataFrame, ranks: pd.DataFrame) -> pd.DataFrame:
    """Full-scale comparison with the published fixed effects and top rank."""
    rows = []
    for resp, table in reference.FIXED_EFFECTS.items():
        for name, (_, lo, hi) in table.items():
            est = float(fixed.loc[fixed["parameter"] == name, f"{resp}_mean"].iloc[0])
            rows.append({"check": f"{resp}.{name}", "estimate": est, "reference": f"[{lo}, {hi}]",
                         "passed": bool(lo <= round(est, 2) <= hi)})
    top = str(ranks.iloc[0]["batter"])
    rows.append({"check": "rankings.top", "estimate": top, "reference": reference.TOP_RANKED_BATTER,
                 "passed": top == reference.TOP_RANKED_BATTER})
    return pd.DataFrame(rows)


def stage_report(run: Run) -> list:
    out = []
    elpd = read_csv(run.out / "intention" / "elpd.csv")
    out.append(run.write_csv(elpd[["response", "delta_elpd", "se", "n_se"]], "report", "elpd.csv"))
    fixed = _interval_table(run, FIXED_ROWS)
    cols = ["parameter"] + [f"{r}_{s}" for r in RESPONSES for s in ("mean", "lower", "upper")]
    out.append(run.write_csv(fixed[cols], "report", "fixed_effects.csv"))
    out.append(run.write_csv(_interval_table(run, SD_ROWS)[cols], "report", "random_effect_sds.csv"))
    table5 = read_csv(run.out / "causal" / "coefficients.csv")
    out.append(run.write_csv(table5, "report", "causal_coefficients.csv"))
    ranks = read_csv(run.out / "value" / "rankings.csv").astype({"batter": str})
    shown = pd.concat([ranks.head(5), ranks.tail(5)]).drop_duplicates("rank")
    out.append(run.write_csv(shown, "report", "approach_rankings.csv"))
    span = float(ranks["runs_per_500pa"].max() - ranks["runs_per_500pa"].min())
    summary = {"runs_per_500pa_span": span, "n_batters_ranked": len(ranks)}
    if (run.out / "synth" / "truth.json").exists() and run.cfg["inputs"]["pitches"] is None:
        rec = recovery_checks(run, fixed)
        out.append(run.write_csv(rec, "report", "recovery.csv"))
        summary["recovery_passed"] = int(rec["passed"].sum())
        summary["recovery_total"] = len(rec)
    if run.cfg.get("reference"):
        ref = reference_checks(fixed, ranks)
        out.append(run.write_csv(ref, "report", "reference_check.csv"))
        summary["reference_passed"] = int(ref["passed"].sum())
        summary["reference_total"] = len(ref)
    out.append(run.write_json({"summary": summary}, "report", "summary.json"))
    return out


# --- registry ---------------------------------------------------------------------


def _synth_dep(key):
    return lambda cfg: [] if cfg["inputs"][key] else ["synth"]


STAGES = {
    # name: (upstream stages, config blocks that parameterize it, implementation)
    "synth": (lambda cfg: [], ("synth",), stage_synth),
    "ingest": (_synth_dep("pitches"), ("inputs", "columns"), stage_ingest),
    "linear-weights": (_synth_dep("events"), ("inputs",), stage_linear_weights),
    "train-outcome": (lambda cfg: ["ingest", "linear-weights"], ("gbm",), stage_train_outcome),
    "fit-intention": (lambda cfg: ["ingest"], ("sampler",), stage_fit_intention),
    "elpd-compare": (lambda cfg: ["ingest", "fit-intention"], (), stage_elpd_compare),
    "approaches": (lambda cfg: ["fit-intention"], (), stage_approaches),
    "fit-causal": (lambda cfg: ["ingest", "train-outcome", "approaches"], (), stage_fit_causal),
    "run-value": (lambda cfg: ["ingest", "train-outcome", "fit-causal", "linear-weights", "approaches"],
                  ("chain",), stage_run_value),
    "simulate": (lambda cfg: ["ingest", "train-outcome", "fit-causal", "linear-weights", "approaches", "run-value"],
                 ("chain",), stage_simulate),
    "report": (lambda cfg: ["elpd-compare", "fit-intention", "fit-causal", "approaches", "run-value", "simulate"],
               ("reference", "inputs"), stage_report),
}
PIPELINE = tuple(STAGES)


def stage_key(run: Run, stage: str, deps) -> str:
    blocks = STAGES[stage][1]
    payload = {
        "stage": stage,
        "seed": run.seed,
        "params": {b: run.cfg.get(b) for b in blocks},
        "upstream": {d: run.manifest.entry(d)["outputs"] for d in deps},
        "inputs": {k: file_hash(v) for k, v in run.cfg["inputs"].items() if v and "inputs" in blocks},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def run_stage(run: Run, stage: str, force: bool = False) -> bool:
    """Run ``stage`` unless its manifest entry is current.  Returns True if it ran."""
    deps_fn, _, impl = STAGES[stage]
    deps = deps_fn(run.cfg)
    for d in deps:
        run.manifest.require(d, stage)
    key = stage_key(run, stage, deps)
    entry = run.manifest.entry(stage)
    if not force and entry is not None and entry["key"] == key and run.manifest.intact(stage):
        logger.info("%s: up to date", stage)
        return False
    logger.info("%s: running", stage)
    outputs = impl(run)
    run.manifest.data["run"] = {"config_hash": run.config_hash, "seed": run.seed}
    run.manifest.record(stage, key, outputs)
    return True

"""Monte Carlo size/power experiments and constant calibration.

Every trial draws from its own stream keyed by (grid index, hypothesis,
trial index), and results land in a pre-sized table, so thread count and
completion order never change the report.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from rmt.adaptive_tester import calibrate_C, calibrate_decision_const, full_adaptive_test
from rmt.contamination import (
    Adversary,
    Hypothesis,
    LabeledDataset,
    gen_adaptive_antialign,
    gen_clean,
    gen_huber_lb,
    gen_oblivious_lb,
    gen_oblivious_negmu,
)
from rmt.core import Dataset, RngStream, TestParams, Verdict, _points
from rmt.errors import ExhaustionError, ExperimentError, InvariantViolation, NumericError
from rmt.friendly_filter import FilterConstants, PipelineConfig, SearchBudget, friendly_pipeline, prefilter_thresholds
from rmt.harness.config import Constants, ExperimentConfig, GridPoint, Tester
from rmt.oblivious_tester import TesterConstants, calibrate_mean_const, plain_norm_test, sum_variance_test

FLAG_LIMIT = 0.10
# Errors that mean "this draw left the model", recorded rather than raised.
FLAGGED_ERRORS = (InvariantViolation, ExhaustionError, NumericError)


def wilson_interval(successes: int, total: int, level: float = 0.95) -> tuple[float, float]:
    if total == 0:
        return (math.nan, math.nan)
    lo, hi = proportion_confint(successes, total, alpha=1 - level, method="wilson")
    return float(lo), float(hi)


def params_for(point: GridPoint, constants: Constants) -> TestParams:
    return TestParams(d=point.d, n=point.n, eps=point.eps, alpha=point.alpha, delta=constants.delta, kappa=constants.kappa)


def pipeline_config(constants: Constants) -> PipelineConfig:
    return PipelineConfig(
        kappa=constants.kappa,
        delta=constants.pipeline_delta,
        discard_split=bool(constants.discard_split),
        split_p=constants.split_p or None,
        fallback_best=bool(constants.fallback_best),
        budget=SearchBudget(pair_restarts=constants.pair_restarts),
        constants=FilterConstants(gamma_const=constants.gamma_const, check_const=constants.check_const),
    )


def generate(adversary: Adversary, params: TestParams, hypothesis: Hypothesis, stream: RngStream) -> LabeledDataset:
    """One dataset.  Adversaries that only define an alternative use clean
    null data on the null side."""
    if adversary is Adversary.CLEAN:
        return gen_clean(params, hypothesis, rng=stream)
    if adversary is Adversary.ADAPTIVE_ANTIALIGN:
        return gen_adaptive_antialign(params, hypothesis, rng=stream)
    if hypothesis is Hypothesis.NULL:
        return gen_clean(params, Hypothesis.NULL, rng=stream)
    if adversary is Adversary.OBLIVIOUS_NEGMU:
        return gen_oblivious_negmu(params, rng=stream)
    if adversary is Adversary.HUBER_LB:
        return gen_huber_lb(params, rng=stream)
    if adversary is Adversary.OBLIVIOUS_LB:
        return gen_oblivious_lb(params, rng=stream)
    raise ExperimentError(f"adversary {adversary.value} cannot be simulated")


def run_tester(tester: Tester, data: Dataset, params: TestParams, constants: Constants, stream: RngStream) -> Verdict:
    """prefilter -> friendly filter (SumVariance only) -> tester."""
    if tester is Tester.ADAPTIVE_SPECTRAL:
        return full_adaptive_test(data, params, constants.C, stream, decision_const=constants.decision_const)
    x = _points(data)
    if tester is Tester.SUM_VARIANCE:
        kept = friendly_pipeline(x, params.eps, stream, pipeline_config(constants)).survivors
        tc = TesterConstants(constants.mean_const, constants.var_const, constants.gate_const)
        v = sum_variance_test(x[kept], params, constants=tc)
        v.statistics["statistic"] = v.statistics["mean_dev"]
        return v
    if tester is Tester.PLAIN_NORM:
        norm_dev, _ = prefilter_thresholds(x.shape[0], x.shape[1], constants.pipeline_delta)
        sq = np.einsum("ij,ij->i", x, x)
        return plain_norm_test(x[np.abs(sq - x.shape[1]) < norm_dev], params, constants.plain_const)
    raise ExperimentError(f"unknown tester {tester!r}")


@dataclass(frozen=True)
class TrialOutcome:
    rejected: bool
    statistic: float  # normalised by alpha^2 n^2
    flagged: bool
    branch: str = ""


def run_trial(cfg: ExperimentConfig, g: int, hypothesis: Hypothesis, t: int) -> TrialOutcome:
    point = cfg.grid[g]
    params = params_for(point, cfg.constants)
    stream = RngStream(cfg.seed).split("trial", g, hypothesis.value, t)
    ld = generate(cfg.adversary, params, hypothesis, stream.split("data"))
    try:
        v = run_tester(cfg.tester, ld.data, params, cfg.constants, stream.split("tester"))
    except FLAGGED_ERRORS:
        return TrialOutcome(False, math.nan, True)
    n = v.statistics.get("n", point.n)
    stat = v.statistics["statistic"] / (point.alpha**2 * n * n) if n else math.nan
    return TrialOutcome(v.rejected, float(stat), False, str(v.statistics.get("branch", "")))


@dataclass(frozen=True)
class PointResult:
    d: int
    n: int
    eps: float
    alpha: float
    trials: int
    null_rejects: int
    alt_rejects: int
    null_flagged: int
    alt_flagged: int
    type1: float
    type1_ci: float
    power: float
    power_ci: float
    mean_stat_null: float
    mean_stat_alt: float
    wall_time: float


CSV_COLUMNS = (
    "d", "n", "eps", "alpha", "tester", "adversary", "trials",
    "null_rejects", "alt_rejects", "null_flagged", "alt_flagged",
    "type1", "type1_ci", "power", "power_ci", "mean_stat_null", "mean_stat_alt",
)


@dataclass(frozen=True)
class PowerReport:
    tester: Tester
    adversary: Adversary
    seed: int
    points: tuple[PointResult, ...]

    def rows(self) -> list[dict]:
        out = []
        for p in self.points:
            row = asdict(p)
            row.update(tester=self.tester.value, adversary=self.adversary.value)
            out.append(row)
        return out

    def to_csv(self) -> str:
        """Wall time is left out so reruns are byte-identical."""
        return write_csv(self.rows(), CSV_COLUMNS)

    def to_json(self) -> str:
        return json.dumps({"tester": self.tester.value, "adversary": self.adversary.value, "seed": self.seed, "points": self.rows()}, indent=2)


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def _half_width(k: int, total: int) -> float:
    lo, hi = wilson_interval(k, total)
    return 0.5 * (hi - lo)


def _summarise(point: GridPoint, trials: int, null: list[TrialOutcome], alt: list[TrialOutcome], wall: float) -> PointResult:
    def side(outs):
        ok = [o for o in outs if not o.flagged]
        rejects = sum(o.rejected for o in ok)
        stat = float(np.mean([o.statistic for o in ok])) if ok else math.nan
        rate = rejects / len(ok) if ok else math.nan
        return rejects, len(outs) - len(ok), rate, _half_width(rejects, len(ok)), stat

    nr, nf, t1, t1ci, ns = side(null)
    ar, af, pw, pwci, as_ = side(alt)
    return PointResult(point.d, point.n, point.eps, point.alpha, trials, nr, ar, nf, af, t1, t1ci, pw, pwci, ns, as_, wall)


def run_power_experiment(cfg: ExperimentConfig, threads: int = 1) -> PowerReport:
    """Null and alternative trials at every grid point.

    Trials that raise a filter invariant error are flagged and excluded
    from the rates; more than 10% flagged at any point is an experiment
    error.
    """
    if threads < 1:
        raise ExperimentError("threads must be at least 1")
    tasks = [(g, h, t) for g in range(len(cfg.grid)) for h in (Hypothesis.NULL, Hypothesis.ALT) for t in range(cfg.trials)]
    results: list = [None] * len(tasks)
    elapsed = np.zeros(len(tasks))

    def work(i: int) -> None:
        start = time.perf_counter()
        results[i] = run_trial(cfg, *tasks[i])
        elapsed[i] = time.perf_counter() - start

    if threads == 1:
        for i in range(len(tasks)):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(tasks))))

    points = []
    per_point = 2 * cfg.trials
    for g, point in enumerate(cfg.grid):
        block = results[g * per_point:(g + 1) * per_point]
        null, alt = block[: cfg.trials], block[cfg.trials:]
        flagged = sum(o.flagged for o in block)
        if flagged > FLAG_LIMIT * per_point:
            raise ExperimentError(f"{flagged} of {per_point} trials flagged at {point}")
        wall = float(elapsed[g * per_point:(g + 1) * per_point].sum())
        points.append(_summarise(point, cfg.trials, null, alt, wall))
    return PowerReport(cfg.tester, cfg.adversary, cfg.seed, tuple(points))


# ---------------------------------------------------------------------------
# Calibration


def _plain_const(params: TestParams, constants: Constants, trials: int, root: RngStream) -> float:
    ratios = {}
    for hyp in (Hypothesis.NULL, Hypothesis.ALT):
        vals = []
        for t in range(trials):
            ld = gen_clean(params, hyp, rng=root.split(hyp.value, t))
            v = run_tester(Tester.PLAIN_NORM, ld.data, params, constants, root.split("tester", t))
            vals.append(abs(v.statistics["statistic"]) / (params.alpha**2 * v.statistics["n"] ** 2))
        ratios[hyp] = np.asarray(vals)
    hi = float(np.quantile(ratios[Hypothesis.NULL], 0.95))
    lo = float(np.quantile(ratios[Hypothesis.ALT], 0.05))
    if lo <= hi:
        raise ExperimentError(f"clean null and alternative overlap (null {hi:.3g} >= alt {lo:.3g})")
    return 0.5 * (hi + lo)


def calibrate(cfg: ExperimentConfig, trials: int = 50, c_trials: int = 200) -> list[dict]:
    """Desk-calibrate the tester's constants at each grid point from clean data.

    AdaptiveSpectral yields C then decision_const; SumVariance yields
    mean_const; PlainNorm yields plain_const.
    """
    rows = []
    for g, point in enumerate(cfg.grid):
        params = params_for(point, cfg.constants)
        root = RngStream(cfg.seed).split("calibrate", g)
        found: list[tuple[str, float]] = []
        try:
            if cfg.tester is Tester.ADAPTIVE_SPECTRAL:
                c = calibrate_C(point.d, point.n, point.alpha, point.eps, cfg.constants.delta, c_trials, root.split("C").generator())
                found.append(("C", c))
                found.append(("decision_const", calibrate_decision_const(params, c, trials, root.split("decision"))))
            elif cfg.tester is Tester.SUM_VARIANCE:
                found.append(("mean_const", calibrate_mean_const(params, trials, root.split("mean"), pipeline_config(cfg.constants))))
            else:
                found.append(("plain_const", _plain_const(params, cfg.constants, trials, root.split("plain"))))
        except FLAGGED_ERRORS as exc:
            raise ExperimentError(f"calibration failed at {point}: {exc}") from exc
        for name, value in found:
            rows.append({"d": point.d, "n": point.n, "eps": point.eps, "alpha": point.alpha, "tester": cfg.tester.value, "constant": name, "value": value})
    return rows


CALIBRATION_COLUMNS = ("d", "n", "eps", "alpha", "tester", "constant", "value")


def replay(tester: Tester, labeled: LabeledDataset, alpha: float, constants: Constants, seed: int) -> dict:
    """Run one tester on a stored dataset."""
    params = TestParams(d=labeled.data.d, n=labeled.data.n, eps=labeled.eps, alpha=alpha, delta=constants.delta, kappa=constants.kappa)
    v = run_tester(tester, labeled.data, params, constants, RngStream(seed).split("replay"))
    return {
        "d": params.d, "n": params.n, "eps": params.eps, "alpha": alpha, "tester": tester.value,
        "hypothesis": labeled.hypothesis.value, "decision": v.decision.value,
        "statistic": float(v.statistics["statistic"]), "rejected": v.rejected,
    }


REPLAY_COLUMNS = ("d", "n", "eps", "alpha", "tester", "hypothesis", "decision", "statistic", "rejected")

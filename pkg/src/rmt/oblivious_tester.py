"""The Sum+Variance tester for friendly obliviously contaminated data.

Also holds the sample-complexity formula and an evaluator for the
consequences of friendliness, used to calibrate and to regression-test.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from rmt.core import Dataset, Decision, RngLike, RngStream, TestParams, Verdict, _points, as_generator, corrupt_count
from rmt.errors import ArgumentError, CapacityError, InvariantViolation, NumericError
from rmt.friendly_filter import EXACT_PAIR_LIMIT, Exact, PipelineConfig, Randomized, SearchMode


@dataclass(frozen=True)
class SumVarianceStats:
    n: int
    sum_norm_sq: float
    mean_dev: float
    mean_threshold: float
    variance_stat: float  # nan when the mean check already rejected
    variance_threshold: float
    gate_bound: float
    gate_active: bool
    branch: str  # "mean", "variance" or "none"


@dataclass(frozen=True)
class TesterConstants:
    """The mean threshold is mean_const alpha^2 n^2; the variance threshold is
    1 + var_const (alpha^4 / eps) (n / d); the gate is n <= gate_const kappa^5 (...)."""

    __test__ = False

    mean_const: float = 0.01
    var_const: float = 0.025
    gate_const: float = 1.0

    def __post_init__(self) -> None:
        if min(self.mean_const, self.var_const, self.gate_const) <= 0:
            raise ArgumentError("tester constants must be positive")


def sum_variance_test(
    data: Dataset,
    params: TestParams,
    gate_const: Optional[float] = None,
    constants: TesterConstants = TesterConstants(),
) -> Verdict:
    """Reject on a large | ||S||^2 - n d |, else on a large spread of <X_i, S>.

    n is the row count of ``data`` (the survivors of any prefiltering).
    """
    x = _points(data)
    n, d = x.shape
    eps, alpha, kappa = params.eps, params.alpha, params.kappa
    if n < 2:
        raise ArgumentError("need at least two rows")
    if eps <= 0:
        raise ArgumentError("the variance threshold needs eps > 0")
    gc = constants.gate_const if gate_const is None else gate_const
    if gc <= 0:
        raise ArgumentError("gate_const must be positive")

    s = x.sum(axis=0)
    sum_norm_sq = float(s @ s)
    mean_dev = sum_norm_sq - n * d
    mean_thr = constants.mean_const * alpha**2 * n * n
    var_thr = 1.0 + constants.var_const * (alpha**4 / eps) * (n / d)
    gate_bound = gc * kappa**5 * (math.sqrt(d) / alpha**2 + d * eps / alpha**2)
    gate = n <= gate_bound

    def verdict(decision: Decision, var_stat: float, branch: str) -> Verdict:
        stats = SumVarianceStats(n, sum_norm_sq, mean_dev, mean_thr, var_stat, var_thr, gate_bound, gate, branch)
        return Verdict(decision, asdict(stats))

    if abs(mean_dev) > mean_thr:
        return verdict(Decision.REJECT, math.nan, "mean")
    if sum_norm_sq == 0.0:
        raise NumericError("sum of samples is zero; the variance statistic is undefined")
    proj = x @ s
    var_stat = float(np.mean((proj - d) ** 2) / sum_norm_sq)
    if var_stat >= var_thr and gate:
        return verdict(Decision.REJECT, var_stat, "variance")
    return verdict(Decision.ACCEPT_NULL, var_stat, "none")


def plain_norm_test(data: Dataset, params: TestParams, const: float = 0.5) -> Verdict:
    """The naive baseline: reject when | ||S||^2 - n d | > const alpha^2 n^2.

    Under a clean null the statistic has mean 0 and under a clean
    alternative it has mean alpha^2 n (n - 1), hence the default midpoint.
    """
    x = _points(data)
    n, d = x.shape
    if const <= 0:
        raise ArgumentError("const must be positive")
    s = x.sum(axis=0)
    dev = float(s @ s) - n * d
    thr = const * params.alpha**2 * n * n
    decision = Decision.REJECT if abs(dev) > thr else Decision.ACCEPT_NULL
    return Verdict(decision, {"n": n, "statistic": dev, "threshold": thr})


def sample_complexity_terms(d: int, alpha: float, eps: float) -> tuple[float, float, float, float]:
    """(sqrt(d)/alpha^2, d eps^3/alpha^4, d^(2/3) eps^(2/3)/alpha^(8/3), d eps/alpha^2)."""
    return (
        math.sqrt(d) / alpha**2,
        d * eps**3 / alpha**4,
        d ** (2 / 3) * eps ** (2 / 3) / alpha ** (8 / 3),
        d * eps / alpha**2,
    )


def required_samples_oblivious(d: int, alpha: float, eps: float, kappa: float = 1.0) -> int:
    """ceil(kappa^5 (sqrt(d)/a^2 + d e^3/a^4 + min(d^(2/3) e^(2/3)/a^(8/3), d e/a^2)))."""
    if d < 1 or alpha <= 0 or eps < 0 or kappa <= 0:
        raise ArgumentError("need d >= 1, alpha > 0, eps >= 0, kappa > 0")
    if eps > alpha:
        raise ArgumentError(f"eps={eps} exceeds alpha={alpha}")
    t1, t2, t3, t4 = sample_complexity_terms(d, alpha, eps)
    return math.ceil(kappa**5 * (t1 + t2 + min(t3, t4)))


def required_samples_adaptive(d: int, alpha: float, eps: float) -> float:
    """d eps^2/alpha^4 + sqrt(d)/alpha^2, the adaptive-tester rate without constants."""
    return d * eps**2 / alpha**4 + math.sqrt(d) / alpha**2


# ---------------------------------------------------------------------------
# Friendliness consequences


@dataclass(frozen=True)
class Consequence:
    value: float  # worst left-hand side found
    scale: float  # the bound with its O(1) factor removed
    subset: tuple[int, ...]

    @property
    def constant(self) -> float:
        return self.value / self.scale if self.scale > 0 else math.inf


@dataclass(frozen=True)
class ConsequencesReport:
    norm_sum: Consequence
    bad_variance: Consequence
    frobenius: Consequence
    operator: Consequence


def _subset_stats(g: np.ndarray, rows: np.ndarray, d: int) -> tuple[float, float, float, float]:
    """(| ||Sum||^2 - kd |, sum (<X_i, R> - d)^2, ||sum X X^T||_F, ||sum X X^T||_op) for one subset."""
    gb = g[np.ix_(rows, rows)]
    k = rows.size
    sq = float(gb.sum())
    y = gb.sum(axis=1) - d
    frob = float(np.sqrt((gb * gb).sum()))
    op = float(np.linalg.eigvalsh(gb)[-1])
    return abs(sq - k * d), float(y @ y), frob, op


def friendliness_consequences(
    data: Dataset,
    eps: float,
    kappa: float,
    mode: SearchMode = Exact(),
    rng: RngLike = None,
) -> ConsequencesReport:
    """Worst left-hand sides of the friendliness consequences over subsets.

    The norm-sum bound is scanned over sizes 1..k; the other three over sets
    of size k, with k = min(n, max(1, floor(eps n))).  Scales are
    kappa k (sqrt(eps n d) + eps n), kappa^3 eps^2 n^2 d, kappa d sqrt(eps n)
    and kappa^2 d; ``constant`` is the implied O(1) factor.
    """
    x = _points(data)
    n, d = x.shape
    if kappa <= 0:
        raise ArgumentError("kappa must be positive")
    k = min(n, max(1, corrupt_count(eps, n)))
    en = eps * n
    g = x @ x.T

    if isinstance(mode, Exact):
        if n > EXACT_PAIR_LIMIT:
            raise CapacityError(f"exact scan is limited to n <= {EXACT_PAIR_LIMIT}")
        candidates = [np.array(c) for size in range(1, k + 1) for c in combinations(range(n), size)]
    elif isinstance(mode, Randomized):
        gen = as_generator(rng)
        candidates = []
        norms = np.diag(g)
        candidates.append(np.argsort(-np.abs(norms - d))[:k])
        top = np.linalg.eigh(g)[1][:, -1]
        candidates.append(np.argsort(-np.abs(top))[:k])
        for _ in range(mode.trials):
            size = int(gen.integers(1, k + 1))
            candidates.append(np.sort(gen.choice(n, size=size, replace=False)))
            candidates.append(np.sort(gen.choice(n, size=k, replace=False)))
    else:
        raise ArgumentError(f"unknown search mode {mode!r}")

    best = {name: (-1.0, ()) for name in ("norm", "var", "frob", "op")}
    for rows in candidates:
        dev, var, frob, op = _subset_stats(g, rows, d)
        sz = rows.size
        key = tuple(int(i) for i in rows)
        norm_c = dev / (sz * (math.sqrt(en * d) + en)) if en > 0 else math.inf
        if norm_c > best["norm"][0]:
            best["norm"] = (norm_c, key, dev, sz)
        if sz == k:
            for name, val in (("var", var), ("frob", frob), ("op", op)):
                if val > best[name][0]:
                    best[name] = (val, key)

    norm_c, norm_key, norm_dev, norm_sz = best["norm"]
    return ConsequencesReport(
        norm_sum=Consequence(norm_dev, kappa * norm_sz * (math.sqrt(en * d) + en), norm_key),
        bad_variance=Consequence(best["var"][0], kappa**3 * en * en * d, best["var"][1]),
        frobenius=Consequence(best["frob"][0], kappa * d * math.sqrt(en), best["frob"][1]),
        operator=Consequence(best["op"][0], kappa**2 * d, best["op"][1]),
    )


# ---------------------------------------------------------------------------
# Calibration


def calibrate_mean_const(
    params: TestParams,
    trials: int = 30,
    rng: RngLike = None,
    pipeline: Optional[PipelineConfig] = None,
    quantile: float = 0.05,
) -> float:
    """Midpoint between the clean-null upper and clean-alternative lower
    ``quantile`` of |mean_dev| / (alpha^2 n^2), measured on friendly-pipeline
    survivors.  Only uncontaminated data is used.
    """
    from rmt.contamination import Hypothesis, gen_clean
    from rmt.friendly_filter import friendly_pipeline

    cfg = PipelineConfig(kappa=params.kappa) if pipeline is None else pipeline
    root = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))
    ratios = {}
    for hyp in (Hypothesis.NULL, Hypothesis.ALT):
        vals = []
        for t in range(trials):
            ld = gen_clean(params, hyp, rng=root.split(hyp.value, t))
            kept = friendly_pipeline(ld.data, params.eps, root.split("filter", hyp.value, t), cfg).survivors
            x = ld.data.points[kept]
            s = x.sum(axis=0)
            vals.append(abs(float(s @ s) - x.shape[0] * params.d) / (params.alpha**2 * x.shape[0] ** 2))
        ratios[hyp] = np.asarray(vals)
    hi = float(np.quantile(ratios[Hypothesis.NULL], 1 - quantile))
    lo = float(np.quantile(ratios[Hypothesis.ALT], quantile))
    if lo <= hi:
        raise InvariantViolation(f"clean null and alternative overlap (null {hi:.3g} >= alt {lo:.3g})")
    return 0.5 * (hi + lo)

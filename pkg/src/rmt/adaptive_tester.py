"""Quadratic-time robust mean tester against adaptive contamination.

Spectral filtering (Gram form for n <= d, second-moment form for n > d),
row-sum filtering and the final norm statistic, plus the regularity check
and the convex decomposition of weight vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from rmt.core import (
    Dataset,
    Decision,
    RngLike,
    RngStream,
    TestParams,
    Verdict,
    _points,
    as_generator,
    check_weights,
    corrupt_count,
    gram,
    second_moment,
    top_singular_pair,
    weighted_sum,
)
from rmt.errors import ArgumentError, CapacityError, ConvergenceError, InvariantViolation
from rmt.friendly_filter import EXACT_PAIR_LIMIT, Exact, Randomized, SearchMode, _subset_masks

GUARD_MARGIN = 1e-3


# ---------------------------------------------------------------------------
# gamma_2


@dataclass(frozen=True)
class Gamma2:
    value: float
    C: float
    n: int
    d: int
    alpha: float
    eps: float
    delta: float


def gamma2(n: int, d: int, alpha: float, eps: float, delta: float, C: float = 1.0) -> Gamma2:
    """C (sqrt(n d) + alpha^2 n + sqrt((n + d) ln(1/delta)) + ln(1/delta) + eps n ln(1/eps))."""
    if not 0 < delta < 1:
        raise ArgumentError("delta must lie in (0, 1)")
    if C <= 0:
        raise ArgumentError("C must be positive")
    if n < 1 or d < 1 or not 0 <= eps < 1 or alpha < 0:
        raise ArgumentError("need n, d >= 1, 0 <= eps < 1, alpha >= 0")
    ld = math.log(1 / delta)
    tail = 0.0 if eps == 0 else eps * n * math.log(1 / eps)
    value = C * (math.sqrt(n * d) + alpha**2 * n + math.sqrt((n + d) * ld) + ld + tail)
    return Gamma2(value, C, n, d, alpha, eps, delta)


# ---------------------------------------------------------------------------
# Regularity


@dataclass(frozen=True)
class RegularityParams:
    eps: float
    beta1: float
    beta2: float

    def __post_init__(self) -> None:
        if not 0 < self.eps <= 1:
            raise ArgumentError("eps must lie in (0, 1]")
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise ArgumentError("beta1 and beta2 must be positive")


@dataclass(frozen=True)
class RegularityViolation:
    clause: int  # 1, 2 or 3
    subset: tuple[int, ...]
    deviation: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.deviation / self.bound


def _regularity_devs(x: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Per subset, the three clause deviations (columns)."""
    n, d = x.shape
    m = masks.astype(np.float64)
    sizes = m.sum(axis=1)
    sq = np.einsum("ij,ij->i", x, x)
    c = x @ x.sum(axis=0)
    sums = m @ x
    dev1 = np.abs(m @ sq - sizes * d)
    dev2 = np.abs(np.einsum("ij,ij->i", sums, sums) - sizes * d)
    dev3 = np.abs(np.abs(m @ c) - sizes * d)
    return np.stack([dev1, dev2, dev3], axis=1)


def worst_regularity(
    data: Dataset,
    p: RegularityParams,
    mode: SearchMode = Exact(),
    rng: RngLike = None,
) -> Optional[RegularityViolation]:
    """The subset/clause with the largest deviation-to-bound ratio.

    Subsets are nonempty with |T| <= floor(eps n).  Bounds are beta1,
    beta2 and sqrt(n) beta1 for clauses 1-3 (the O(1) factors set to 1).
    """
    x = _points(data)
    n = x.shape[0]
    k = corrupt_count(p.eps, n)
    if k < 1:
        return None
    bounds = np.array([p.beta1, p.beta2, math.sqrt(n) * p.beta1])
    if isinstance(mode, Exact):
        if n > EXACT_PAIR_LIMIT:
            raise CapacityError(f"exact regularity check is limited to n <= {EXACT_PAIR_LIMIT}")
        masks = _subset_masks(n, k)
    elif isinstance(mode, Randomized):
        gen = as_generator(rng)
        sq_dev = np.einsum("ij,ij->i", x, x) - x.shape[1]
        c = x @ x.sum(axis=0)
        seeds = []
        for score in (sq_dev, -sq_dev, c, -c):
            order = np.argsort(-score, kind="stable")
            for size in range(1, k + 1):
                seeds.append(order[:size])
        for _ in range(mode.trials):
            size = int(gen.integers(1, k + 1))
            seeds.append(gen.choice(n, size=size, replace=False))
        masks = np.zeros((len(seeds), n), dtype=bool)
        for row, s in enumerate(seeds):
            masks[row, s] = True
    else:
        raise ArgumentError(f"unknown search mode {mode!r}")
    ratios = _regularity_devs(x, masks) / bounds
    row, col = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
    devs = ratios[row, col] * bounds[col]
    return RegularityViolation(int(col) + 1, tuple(int(i) for i in np.flatnonzero(masks[row])), float(devs), float(bounds[col]))


def check_regular(
    data: Dataset,
    p: RegularityParams,
    mode: SearchMode = Exact(),
    rng: RngLike = None,
) -> Optional[RegularityViolation]:
    """The worst clause violation of (eps, beta1, beta2)-regularity, or None."""
    w = worst_regularity(data, p, mode, rng)
    if w is None or w.deviation <= w.bound:
        return None
    return w


# ---------------------------------------------------------------------------
# Weight updates


def filter_step(w: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """w'_i = (1 - tau_i / max tau) w_i; the argmax coordinates become exactly 0."""
    ww = check_weights(w, np.asarray(w).shape[0])
    t = np.asarray(tau, dtype=np.float64)
    if t.shape != ww.shape or np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ArgumentError("tau must be a finite nonnegative vector matching w")
    top = float(t.max(initial=0.0))
    if top <= 0:
        raise ArgumentError("all scores are zero")
    out = (1.0 - t / top) * ww
    out[t == top] = 0.0
    return np.clip(out, 0.0, 1.0)


def mass_condition(w: np.ndarray, bad_mask: np.ndarray, factor: float = 5.0) -> bool:
    """Good mass removed is at most ``factor`` times bad mass removed."""
    w = np.asarray(w, dtype=np.float64)
    bad = np.asarray(bad_mask, dtype=bool)
    good_removed = float(np.sum(1.0 - w[~bad]))
    bad_removed = float(np.sum(1.0 - w[bad]))
    return good_removed <= factor * bad_removed + 1e-12


@dataclass
class SpectralResult:
    weights: np.ndarray
    iterations: int
    top_value: float
    threshold: float
    history: list[np.ndarray] = field(default_factory=list)


def _top(a: np.ndarray, gen: np.random.Generator) -> tuple[float, np.ndarray]:
    try:
        return top_singular_pair(a, tol=1e-6, max_iter=3000, rng=gen)
    except ConvergenceError as exc:
        # the best iterate is still a lower bound on the spectral norm
        return exc.value, exc.vector


def _spectral_loop(x, gamma: Gamma2, eps, matrix, scores, update, rng, trace, keep_history) -> SpectralResult:
    n = x.shape[0]
    gen = as_generator(rng)
    w = np.ones(n)
    cap = 6 * corrupt_count(eps, n) + 1
    thr = 5.0 * gamma.value
    history = [w.copy()] if keep_history else []
    t = 0
    while True:
        lam, v = _top(matrix(w), gen)
        if lam < thr * (1.0 - GUARD_MARGIN):
            return SpectralResult(w, t, lam, thr, history)
        if t >= cap:
            raise InvariantViolation(f"spectral filter exceeded {cap} iterations (top value {lam:.6g} >= {thr:.6g})")
        tau = scores(w, v)
        if float(tau.max(initial=0.0)) <= 0:
            raise InvariantViolation("all filter scores vanished before the guard was met")
        w = update(w, tau)
        t += 1
        if trace is not None:
            trace.write(f"{t},{lam!r},{int(np.argmax(tau))},{float(w.sum())!r}\n")
        if keep_history:
            history.append(w.copy())


def spectral_filter_small_n(
    data: Dataset,
    gamma: Gamma2,
    eps: Optional[float] = None,
    rng: RngLike = None,
    *,
    trace: Optional[IO[str]] = None,
    keep_history: bool = False,
) -> SpectralResult:
    """Filter on ||Gram(w) - d diag(w)|| for n <= d with scores v_i^2 / w_i."""
    x = _points(data)
    n, d = x.shape
    if n > d:
        raise ArgumentError(f"this filter needs n <= d (n={n}, d={d})")
    e = gamma.eps if eps is None else eps

    def matrix(w):
        return gram(x, w) - d * np.diag(w)

    def scores(w, v):
        out = np.zeros(n)
        live = w > 0
        out[live] = v[live] ** 2 / w[live]
        return out

    return _spectral_loop(x, gamma, e, matrix, scores, filter_step, rng, trace, keep_history)


def spectral_filter_large_n(
    data: Dataset,
    gamma: Gamma2,
    eps: Optional[float] = None,
    rng: RngLike = None,
    *,
    trace: Optional[IO[str]] = None,
    keep_history: bool = False,
) -> SpectralResult:
    """Filter on ||M(w) - n I|| for n > d with scores <v, X_i>^2.

    Only the top-scored indices whose weights first reach 2 eps n are
    down-weighted.
    """
    x = _points(data)
    n, d = x.shape
    if n <= d:
        raise ArgumentError(f"this filter needs n > d (n={n}, d={d})")
    e = gamma.eps if eps is None else eps

    def matrix(w):
        return second_moment(x, w) - n * np.eye(d)

    def scores(w, v):
        return np.where(w > 0, (x @ v) ** 2, 0.0)

    def update(w, tau):
        order = np.argsort(-tau, kind="stable")
        csum = np.cumsum(w[order])
        hit = np.flatnonzero(csum >= 2 * e * n)
        cut = int(hit[0]) + 1 if hit.size else n
        head = order[:cut]
        out = w.copy()
        out[head] = filter_step(w[head], tau[head])
        return out

    return _spectral_loop(x, gamma, e, matrix, scores, update, rng, trace, keep_history)


def rowsum_filter(data: Dataset, w: np.ndarray, eps: float) -> np.ndarray:
    """Zero the floor(eps n) supported indices with the largest row-sum deviation.

    tau_i = |<sqrt(w_i) X_i, sum_j sqrt(w_j) X_j> - w_i d| on the support;
    ties go to the smaller index.
    """
    x = _points(data)
    n, d = x.shape
    ww = check_weights(w, n)
    k = corrupt_count(eps, n)
    out = ww.copy()
    if k == 0:
        return out
    s = weighted_sum(x, ww)
    tau = np.abs(np.sqrt(ww) * (x @ s) - ww * d)
    support = np.flatnonzero(ww > 0)
    order = support[np.argsort(-tau[support], kind="stable")]
    out[order[:k]] = 0.0
    return out


# ---------------------------------------------------------------------------
# The tester


def adaptive_prefilter_bound(n: int, d: int, delta: float) -> float:
    """10 (sqrt(d ln(n/delta)) + ln(n/delta))."""
    big_l = math.log(max(n, 1) / delta)
    return 10.0 * (math.sqrt(d * big_l) + big_l)


def full_adaptive_test(
    data: Dataset,
    params: TestParams,
    C: float = 1.0,
    rng: RngLike = None,
    *,
    decision_const: float = 0.7,
    trace: Optional[IO[str]] = None,
) -> Verdict:
    """Prefilter norms, spectral filter, row-sum filter, then threshold
    | ||Sum(w')||^2 - d ||w'||_1 | at decision_const alpha^2 n^2 (n after
    prefiltering).

    Reject means a mean shift was detected.
    """
    x = _points(data)
    n0, d = x.shape
    bound = adaptive_prefilter_bound(n0, d, params.delta)
    sq = np.einsum("ij,ij->i", x, x)
    kept = np.flatnonzero(np.abs(sq - d) < bound)
    n = int(kept.size)
    if decision_const <= 0:
        raise ArgumentError("decision_const must be positive")
    thr = decision_const * params.alpha**2 * n * n
    stats = {"n_input": n0, "n": n, "threshold": thr, "C": C}
    if n == 0:
        stats.update(statistic=0.0, iterations=0, branch="empty")
        return Verdict(Decision.ACCEPT_NULL, stats)
    xk = x[kept]
    g2 = gamma2(n, d, params.alpha, params.eps, params.delta, C)
    if corrupt_count(params.eps, n) == 0:
        res = SpectralResult(np.ones(n), 0, math.nan, 5 * g2.value)
        branch = "none"
    elif n <= d:
        res = spectral_filter_small_n(xk, g2, params.eps, rng, trace=trace)
        branch = "small_n"
    else:
        res = spectral_filter_large_n(xk, g2, params.eps, rng, trace=trace)
        branch = "large_n"
    w2 = rowsum_filter(xk, res.weights, params.eps)
    s = weighted_sum(xk, w2)
    statistic = float(s @ s) - d * float(w2.sum())
    stats.update(
        statistic=statistic,
        gamma2=g2.value,
        iterations=res.iterations,
        top_value=res.top_value,
        branch=branch,
        weight_sum=float(w2.sum()),
    )
    decision = Decision.REJECT if abs(statistic) >= thr else Decision.ACCEPT_NULL
    return Verdict(decision, stats)


def calibrate_C(
    d: int,
    n: int,
    alpha: float,
    eps: float,
    delta: float = 0.01,
    trials: int = 200,
    rng: RngLike = None,
    candidates: tuple[float, ...] = (1, 2, 4, 8, 16),
    target: float = 0.95,
) -> float:
    """Smallest candidate C for which clean null data leaves the spectral
    filter untouched in at least ``target`` of the trials."""
    gen = as_generator(rng)
    datasets = [gen.standard_normal((n, d)) for _ in range(trials)]
    for C in sorted(candidates):
        g2 = gamma2(n, d, alpha, eps, delta, C)
        untouched = 0
        for x in datasets:
            filt = spectral_filter_small_n if n <= d else spectral_filter_large_n
            try:
                res = filt(x, g2, eps, gen)
            except InvariantViolation:
                continue
            untouched += res.iterations == 0
        if untouched >= target * trials:
            return float(C)
    raise InvariantViolation(f"no C in {candidates} keeps clean data untouched")


def calibrate_decision_const(
    params: TestParams,
    C: float = 1.0,
    trials: int = 50,
    rng: RngLike = None,
    quantile: float = 0.05,
) -> float:
    """Midpoint between the clean-null upper and clean-alternative lower
    ``quantile`` of |statistic| / (alpha^2 n^2).

    Only uncontaminated data is used, so the adversary never informs the
    threshold.
    """
    from rmt.contamination import Hypothesis, gen_clean

    root = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))
    ratios = {}
    for hyp in (Hypothesis.NULL, Hypothesis.ALT):
        vals = []
        for t in range(trials):
            ld = gen_clean(params, hyp, rng=root.split(hyp.value, t))
            v = full_adaptive_test(ld.data, params, C, root.split("filter", hyp.value, t))
            vals.append(abs(v.statistics["statistic"]) / (params.alpha**2 * v.statistics["n"] ** 2))
        ratios[hyp] = np.asarray(vals)
    hi = float(np.quantile(ratios[Hypothesis.NULL], 1 - quantile))
    lo = float(np.quantile(ratios[Hypothesis.ALT], quantile))
    if lo <= hi:
        raise InvariantViolation(f"clean null and alternative overlap (null {hi:.3g} >= alt {lo:.3g})")
    return 0.5 * (hi + lo)


# ---------------------------------------------------------------------------
# Convex decomposition


def convex_subset_decompose(w: np.ndarray, k: int) -> list[tuple[float, tuple[int, ...]]]:
    """Write w as sum_j a_j 1_{T_j} with a_j >= 0, sum a_j <= 1 and |T_j| <= k.

    Lay the coordinates end to end on [0, ||w||_1) and read them through a
    unit window shifted by u in [0, 1): index i is in T(u) when some u + j
    (j integer) falls in its segment.  Each segment is at most 1 long, so
    i is hit for exactly a w_i fraction of u, and T(u) has at most
    ceil(||w||_1) <= k members.  T(u) is constant between breakpoints.
    """
    ww = np.asarray(w, dtype=np.float64)
    if ww.ndim != 1 or np.any(ww < 0) or np.any(ww > 1) or not np.all(np.isfinite(ww)):
        raise ArgumentError("weights must lie in [0, 1]")
    if k < 0:
        raise ArgumentError("k must be nonnegative")
    total = float(ww.sum())
    if total > k + 1e-12:
        raise ArgumentError(f"||w||_1 = {total} exceeds k = {k}")
    ends = np.cumsum(ww)
    if total > k:  # round-off overshoot; a wrap past k would add a member
        ends *= k / total
    starts = np.concatenate([[0.0], ends[:-1]])
    cuts = np.unique(np.concatenate([[0.0, 1.0], np.mod(starts, 1.0), np.mod(ends, 1.0)]))
    # merge breakpoints that differ only by round-off
    cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-12])]
    cuts[-1] = 1.0
    merged: dict[tuple[int, ...], float] = {}
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        u = 0.5 * (lo + hi)
        # i is in T(u) iff some integer j has starts_i <= u + j < ends_i
        j = np.ceil(starts - u)
        member = (ww > 0) & (u + j < ends)
        subset = tuple(int(i) for i in np.flatnonzero(member))
        if subset:
            merged[subset] = merged.get(subset, 0.0) + float(hi - lo)
    return [(a, t) for t, a in merged.items()]

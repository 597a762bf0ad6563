"""Numeric evaluation of the lower-bound formulas.

Covers the Huber and oblivious chi-square second moments (Monte Carlo over
the overlap statistics), the beta root of the oblivious construction, the
4x4 determinant factoring identity, the low-degree norm bound, and two
Gaussian MGF identities used as oracles.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from rmt.core import RngLike, as_generator, corrupt_count, top_singular_pair
from rmt.errors import ArgumentError, ConfigError, PreconditionError

# ---------------------------------------------------------------------------
# Configs and results


@dataclass(frozen=True)
class HuberLBConfig:
    n: int
    d: int
    eps: float
    alpha: float
    K: float = 100.0
    trials: int = 100_000
    batches: int = 50

    def __post_init__(self) -> None:
        _check_common(self.n, self.d, self.eps, self.alpha)
        if self.K < 0:
            raise ArgumentError("K must be nonnegative")
        if self.trials < self.batches or self.batches < 30:
            raise ArgumentError("need batches >= 30 and trials >= batches")


@dataclass(frozen=True)
class ObliviousLBConfig:
    n: int
    d: int
    eps: float
    alpha: float
    beta: Optional[float] = None
    trials: int = 100_000
    batches: int = 50

    def __post_init__(self) -> None:
        _check_common(self.n, self.d, self.eps, self.alpha)
        if self.beta is not None and self.beta < 0:
            raise ArgumentError("beta must be nonnegative")
        if self.trials < self.batches or self.batches < 30:
            raise ArgumentError("need batches >= 30 and trials >= batches")


@dataclass(frozen=True)
class LowDegreeConfig:
    """Inputs of the low-degree norm bound.

    ``sphere_const`` and ``rosenthal_const`` stand in for the unspecified
    absolute constants of the O(t)^{t/2} sphere-moment factor and of the
    binomial moment bound.  They shape the bound; they are not ground truth.
    """

    n: int
    d: int
    eps: float
    alpha: float
    D: int
    sphere_const: float = 2.0
    rosenthal_const: float = 2.0

    def __post_init__(self) -> None:
        _check_common(self.n, self.d, self.eps, self.alpha)
        if self.D < 1:
            raise ArgumentError("degree D must be at least 1")
        if not 0 < self.eps < 1:
            raise ArgumentError("eps must lie in (0, 1)")


class MomentMode(str, enum.Enum):
    EXACT = "ExactMoments"
    ROSENTHAL = "RosenthalBound"


@dataclass(frozen=True)
class Chi2Estimate:
    estimate: float
    stderr: float
    diverged: bool
    draws: int
    batches: int
    acceptance: float = 1.0
    extra: dict = field(default_factory=dict)

    def passes(self, limit: float = 1.01, sigmas: float = 3.0) -> bool:
        return (not self.diverged) and self.estimate <= limit + sigmas * self.stderr


def _check_common(n: int, d: int, eps: float, alpha: float) -> None:
    if n < 1 or d < 1:
        raise ArgumentError("n and d must be positive")
    if not 0 <= eps < 1:
        raise ArgumentError("eps must lie in [0, 1)")
    if alpha < 0:
        raise ArgumentError("alpha must be nonnegative")


def _batch_means(values: np.ndarray, batches: int) -> tuple[float, float]:
    usable = (values.size // batches) * batches
    means = values[:usable].reshape(batches, -1).mean(axis=1)
    return float(values.mean()), float(means.std(ddof=1) / math.sqrt(batches))


# ---------------------------------------------------------------------------
# beta and the factoring identity


def set_beta(cfg) -> float:
    """beta = (1/n)(1 - sqrt(1 - alpha^2 n / (d eps))), the root that zeroes
    alpha^2 n - 2 beta d eps n + beta^2 d eps n^2."""
    n, d, eps, alpha = cfg.n, cfg.d, cfg.eps, cfg.alpha
    if eps <= 0 or alpha**2 * n >= d * eps:
        raise PreconditionError(f"need alpha^2 n < d eps (got {alpha**2 * n:g} vs {d * eps:g})")
    x = alpha**2 * n / (d * eps)
    # 1 - sqrt(1 - x) written without cancellation
    return (x / (1.0 + math.sqrt(1.0 - x))) / n


def beta_residual(beta: float, n: int, d: int, eps: float, alpha: float) -> float:
    """Relative residual of the quadratic that set_beta solves."""
    terms = (alpha**2 * n, 2 * beta * d * eps * n, beta**2 * d * eps * n**2)
    return abs(terms[0] - terms[1] + terms[2]) / max(terms)


def factored_lhs(alpha: float, beta: float, eps: float, gamma: float, n: float, d: float, *, drop_beta_group: bool = False) -> float:
    """The factored form of det(I + D Sigma / c) c^2 with c = (1-eps) alpha^2 n + d.

    ``drop_beta_group`` omits alpha^2 n - 2 beta d eps n + beta^2 d eps n^2,
    which vanishes when beta comes from set_beta.
    """
    a2 = alpha * alpha
    first = d + beta**2 * d * (eps**2 - gamma) * n**2
    group = 0.0 if drop_beta_group else a2 * n - 2 * beta * d * eps * n + beta**2 * d * eps * n**2
    second = (
        group
        - 2 * a2 * eps * n
        + a2 * gamma * n
        + 2 * beta * d * gamma * n
        - 2 * beta**2 * d * eps**2 * n**2
        + beta**2 * d * eps * gamma * n**2
    )
    return first * first - second * second


def sigma_matrix(alpha: float, beta: float, eps: float, n: float, d: float) -> np.ndarray:
    a2 = alpha * alpha
    p = (1 - eps) * n * beta**2 * d
    bd = beta * d
    return np.array(
        [
            [2 * p, p + bd, p + bd, 2 * bd],
            [p + bd, p - a2, 2 * bd, bd - a2],
            [p + bd, 2 * bd, p - a2, bd - a2],
            [2 * bd, bd - a2, bd - a2, -2 * a2],
        ]
    )


def d_matrix(eps: float, gamma: float, n: float) -> np.ndarray:
    return np.diag([gamma * n, (eps - gamma) * n, (eps - gamma) * n, (1 - 2 * eps + gamma) * n])


def det_identity_check(alpha: float, beta: float, eps: float, gamma: float, n: float, d: float, rtol: float = 1e-9):
    """Compare the factored expression with the direct 4x4 determinant route.

    Returns ``(lhs, rhs, ok)`` with ok meaning |lhs - rhs| <= rtol * max(1, |lhs|).
    """
    c = (1 - eps) * alpha**2 * n + d
    lhs = factored_lhs(alpha, beta, eps, gamma, n, d)
    mat = np.eye(4) + d_matrix(eps, gamma, n) @ sigma_matrix(alpha, beta, eps, n, d) / c
    rhs = float(np.linalg.det(mat)) * c * c
    ok = abs(lhs - rhs) <= rtol * max(1.0, abs(lhs))
    return lhs, rhs, ok


def random_admissible_draw(gen: np.random.Generator) -> tuple[float, float, float, float, int, int]:
    """(alpha, beta, eps, gamma, n, d) with alpha, eps in (0, 1), gamma <= eps,
    beta in (0, 0.1/n), n in [10, 1000] and d in [10, 10^4]."""
    n = int(gen.integers(10, 1001))
    d = int(gen.integers(10, 10_001))
    alpha = float(gen.uniform(0, 1))
    eps = float(gen.uniform(0, 1))
    gamma = float(gen.uniform(0, eps))
    beta = float(gen.uniform(0, 0.1 / n))
    return alpha, beta, eps, gamma, n, d


def identity_check_suite(draws: int, rng: RngLike = None, rtol: float = 1e-9) -> tuple[int, float]:
    """Run det_identity_check on random admissible draws.

    Returns (number passed, worst relative error).
    """
    if draws < 0:
        raise ArgumentError("draws must be nonnegative")
    gen = as_generator(rng)
    passed, worst = 0, 0.0
    for _ in range(draws):
        lhs, rhs, ok = det_identity_check(*random_admissible_draw(gen), rtol=rtol)
        passed += ok
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return passed, worst


# ---------------------------------------------------------------------------
# Oblivious chi-square


def oblivious_log_integrand(gamma: np.ndarray, cfg: ObliviousLBConfig, beta: float) -> np.ndarray:
    """log of (lhs / d^2)^(-d/2); +inf where lhs <= 0."""
    lhs = factored_lhs(cfg.alpha, beta, cfg.eps, gamma, cfg.n, cfg.d)
    lhs = np.asarray(lhs, dtype=np.float64)
    out = np.full(lhs.shape, np.inf)
    pos = lhs > 0
    out[pos] = -0.5 * cfg.d * (np.log(lhs[pos]) - 2.0 * math.log(cfg.d))
    return out


def oblivious_chi2_estimate(cfg: ObliviousLBConfig, rng: RngLike = None) -> Chi2Estimate:
    """Monte Carlo second moment of the oblivious construction.

    gamma n ~ HGeom(n, k, k) with k = floor(eps n) is the overlap of the two
    corrupted sets; the integrand is (lhs / d^2)^(-d/2), evaluated in logs.
    The formula, and beta when it is derived, use the realised rate k/n.
    """
    n, d, alpha = cfg.n, cfg.d, cfg.alpha
    k = corrupt_count(cfg.eps, n)
    # The identity assumes |A| = eps n exactly, so the formula runs at the
    # realised rate k/n; a non-integer eps n would bias the estimate below 1.
    cfg = replace(cfg, eps=k / n)
    beta = set_beta(cfg) if cfg.beta is None else cfg.beta
    if beta > 0.1 / n:
        raise PreconditionError(f"beta = {beta:g} exceeds 0.1/n")
    if alpha > 0 and n > 0.1 * d / alpha**2:
        raise PreconditionError("need n <= 0.1 d / alpha^2")
    gen = as_generator(rng)
    if k == 0:
        overlap = np.zeros(cfg.trials)
    else:
        overlap = gen.hypergeometric(k, n - k, k, size=cfg.trials).astype(np.float64)
    logs = oblivious_log_integrand(overlap / n, cfg, beta)
    if not np.all(np.isfinite(logs)) or logs.max() > 700:
        return Chi2Estimate(math.inf, math.inf, True, cfg.trials, cfg.batches, extra={"beta": beta, "eps_effective": cfg.eps})
    est, se = _batch_means(np.exp(logs), cfg.batches)
    return Chi2Estimate(est, se, False, cfg.trials, cfg.batches, extra={"beta": beta, "eps_effective": cfg.eps})


# ---------------------------------------------------------------------------
# Huber chi-square


def huber_t_from_counts(a, b, y, n: int, eps: float, alpha: float):
    """t_{S,T} from |S| = a, |T| = b and y = |(S ∪ T)^c|."""
    return (alpha**2 / eps**2) * (y + eps * (a + b) - eps * (2 - eps) * n)


def huber_t_from_sets(s: np.ndarray, t: np.ndarray, eps: float, alpha: float) -> float:
    """t_{S,T} from boolean membership vectors of S and T."""
    s = np.asarray(s, dtype=bool)
    t = np.asarray(t, dtype=bool)
    inter = np.count_nonzero(s & t)
    sym = np.count_nonzero(s ^ t)
    outside = np.count_nonzero(~(s | t))
    return (alpha**2 / eps**2) * (eps**2 * inter - eps * (1 - eps) * sym + (1 - eps) ** 2 * outside)


def huber_log_integrand(t: np.ndarray, d: int) -> np.ndarray:
    """log of (1 - (t/d)^2)^(-d/2); +inf where |t| >= d."""
    r = np.asarray(t, dtype=np.float64) / d
    out = np.full(r.shape, np.inf)
    ok = np.abs(r) < 1
    out[ok] = -0.5 * d * np.log1p(-r[ok] ** 2)
    return out


def _window_binomial(gen: np.random.Generator, cfg: HuberLBConfig, count: int) -> tuple[np.ndarray, float]:
    center = (1 - cfg.eps) * cfg.n
    half = cfg.K * math.sqrt(cfg.eps * cfg.n)
    out = np.empty(0, dtype=np.int64)
    drawn = 0
    while out.size < count:
        want = max(1024, 2 * (count - out.size))
        draws = gen.binomial(cfg.n, 1 - cfg.eps, size=want)
        drawn += want
        kept = draws[np.abs(draws - center) <= half]
        if drawn >= 10_000 and (out.size + kept.size) / drawn < 1e-3:
            raise ConfigError("good-set window rejection sampling accepts fewer than 1e-3 of draws")
        out = np.concatenate([out, kept])
    accepted = (out.size) / drawn
    return out[:count], accepted


def huber_chi2_estimate(cfg: HuberLBConfig, rng: RngLike = None) -> Chi2Estimate:
    """Monte Carlo second moment of the Huber lower-bound mixture.

    |S|, |T| ~ Binomial(n, 1-eps) restricted to (1-eps) n +/- K sqrt(eps n);
    y = |(S ∪ T)^c| ~ HGeom(n, n-|S|, n-|T|).
    """
    if cfg.eps <= 0:
        raise ArgumentError("eps must be positive")
    if cfg.alpha < cfg.eps:
        raise PreconditionError("need alpha >= eps")
    gen = as_generator(rng)
    a, acc_a = _window_binomial(gen, cfg, cfg.trials)
    b, acc_b = _window_binomial(gen, cfg, cfg.trials)
    # y = |S^c ∩ T^c|: draw n-|S| from n items of which n-|T| are marked
    bad_a = cfg.n - a
    bad_b = cfg.n - b
    y = np.zeros(cfg.trials, dtype=np.int64)
    live = (bad_a > 0) & (bad_b > 0)
    y[live] = gen.hypergeometric(bad_b[live], cfg.n - bad_b[live], bad_a[live])
    t = huber_t_from_counts(a, b, y, cfg.n, cfg.eps, cfg.alpha)
    logs = huber_log_integrand(t, cfg.d)
    acceptance = min(acc_a, acc_b)
    if not np.all(np.isfinite(logs)) or logs.max() > 700:
        return Chi2Estimate(math.inf, math.inf, True, cfg.trials, cfg.batches, acceptance)
    est, se = _batch_means(np.exp(logs), cfg.batches)
    return Chi2Estimate(est, se, False, cfg.trials, cfg.batches, acceptance)


# ---------------------------------------------------------------------------
# Low-degree norm bound


def _log_binom_pmf(n: int, p: float) -> np.ndarray:
    k = np.arange(n + 1)
    lg = np.array([math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) for i in k])
    with np.errstate(divide="ignore"):
        return lg + k * np.log(p) + (n - k) * np.log1p(-p)


def _logsumexp(v: np.ndarray) -> float:
    v = v[np.isfinite(v)]
    if v.size == 0:
        return -math.inf
    m = float(v.max())
    return m + math.log(float(np.exp(v - m).sum()))


def binomial_central_moment(n: int, p: float, q: int) -> float:
    """E (Y - np)^q for Y ~ Bin(n, p), summed exactly over the pmf in log space."""
    return math.exp(log_binomial_central_moment(n, p, q)) if q % 2 == 0 else _signed_central_moment(n, p, q)


def log_binomial_central_moment(n: int, p: float, q: int) -> float:
    """log E (Y - np)^q for even q."""
    if q % 2:
        raise ArgumentError("log form needs an even order")
    if q == 0:
        return 0.0
    logpmf = _log_binom_pmf(n, p)
    dev = np.abs(np.arange(n + 1) - n * p)
    with np.errstate(divide="ignore"):
        return _logsumexp(logpmf + q * np.log(dev))


def _signed_central_moment(n: int, p: float, q: int) -> float:
    logpmf = _log_binom_pmf(n, p)
    dev = np.arange(n + 1) - n * p
    with np.errstate(divide="ignore"):
        logs = logpmf + q * np.log(np.abs(dev))
    pos = _logsumexp(logs[dev > 0])
    neg = _logsumexp(logs[dev < 0])
    return math.exp(pos) - math.exp(neg)


def log_rosenthal_moment(n: int, p: float, q: int, c: float) -> float:
    """log of (c q)^q n p + (c q)^{q/2} (n p (1-p))^{q/2}, a bound on E (Y - np)^q."""
    np_ = n * p
    first = q * math.log(c * q) + math.log(np_) if np_ > 0 else -math.inf
    var = np_ * (1 - p)
    second = 0.5 * q * (math.log(c * q) + math.log(var)) if var > 0 else -math.inf
    return _logsumexp(np.array([first, second]))


def lowdegree_log_terms(cfg: LowDegreeConfig, mode: MomentMode = MomentMode.EXACT) -> dict[int, float]:
    """log of each even-t summand (1/t!) * bound on E <X, X'>^t; odd t contribute 0."""
    mode = MomentMode(mode)
    n, d, eps, alpha = cfg.n, cfg.d, cfg.eps, cfg.alpha
    ratio = (1 - eps) / eps
    probs = [((1 - eps) ** 2, 0), (eps * (1 - eps), 1), (eps**2, 2)]
    terms: dict[int, float] = {}
    for t in range(2, cfg.D + 1, 2):
        parts = []
        for p, power in probs:
            if mode is MomentMode.EXACT:
                log_m = log_binomial_central_moment(n, p, 2 * t)
            else:
                log_m = log_rosenthal_moment(n, p, 2 * t, cfg.rosenthal_const)
            log_coef = power * t * math.log(ratio) if ratio > 0 else (-math.inf if power else 0.0)
            parts.append(log_coef + 0.5 * log_m)
        bracket = _logsumexp(np.array(parts))
        prefactor = 0.5 * t * (math.log(cfg.sphere_const * t) - math.log(d)) + 2 * t * math.log(alpha) if alpha > 0 else -math.inf
        terms[t] = prefactor + bracket - math.lgamma(t + 1)
    return terms


def lowdegree_log_bound(cfg: LowDegreeConfig, mode: MomentMode = MomentMode.EXACT) -> float:
    """log of the bound on ||L^{<=D} - 1||^2 (-inf when it is exactly 0)."""
    terms = lowdegree_log_terms(cfg, mode)
    return _logsumexp(np.array(list(terms.values()))) if terms else -math.inf


def lowdegree_norm_bound(cfg: LowDegreeConfig, mode: MomentMode = MomentMode.EXACT) -> float:
    """Bound on ||L^{<=D} - 1||^2 = sum_t (1/t!) E <X, X'>^t; +inf only if it exceeds float range."""
    log_value = lowdegree_log_bound(cfg, mode)
    if log_value == -math.inf:
        return 0.0
    return math.exp(log_value) if log_value < 709 else math.inf


# ---------------------------------------------------------------------------
# MGF oracles


def _min_eigenvalue(m: np.ndarray, rng: RngLike) -> float:
    # largest eigenvalue of -M, found as the top of the shifted PSD matrix -M + cI
    c = float(np.linalg.norm(m)) + 1.0
    top, _ = top_singular_pair(-m + c * np.eye(m.shape[0]), tol=1e-10, max_iter=20_000, rng=rng)
    return -(top - c)


def mgf_det_check(m: np.ndarray, samples: int, rng: RngLike = None) -> tuple[float, float, float]:
    """Monte Carlo E exp(-z^T M z / 2) for z ~ N(0, I) against det(I + M)^(-1/2)."""
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
        raise ArgumentError("M must be symmetric")
    gen = as_generator(rng)
    if _min_eigenvalue(m, gen) <= -1.0:
        raise PreconditionError("every eigenvalue of M must exceed -1")
    closed = float(np.linalg.det(np.eye(m.shape[0]) + m)) ** -0.5
    total = 0.0
    chunk = 200_000
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        z = gen.standard_normal((size, m.shape[0]))
        total += float(np.exp(-0.5 * np.einsum("ij,jk,ik->i", z, m, z)).sum())
        done += size
    mc = total / samples
    return mc, closed, abs(mc - closed) / abs(closed)


def shifted_gaussian_integral_check(a: float, s, delta: float, samples: int, rng: RngLike = None) -> tuple[float, float, float]:
    """Monte Carlo E exp(-a/2 ||z||^2 - <s, z>) for z ~ N(0, delta^2 I) against
    (a delta^2 + 1)^(-d/2) exp(||s||^2 / (2 (a + 1/delta^2)))."""
    if a < 0 or delta <= 0:
        raise ArgumentError("need a >= 0 and delta > 0")
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    d = s.shape[0]
    gen = as_generator(rng)
    closed = (a * delta**2 + 1) ** (-d / 2) * math.exp(float(s @ s) / (2 * (a + 1 / delta**2)))
    total = 0.0
    chunk = 200_000
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        z = delta * gen.standard_normal((size, d))
        total += float(np.exp(-0.5 * a * np.einsum("ij,ij->i", z, z) - z @ s).sum())
        done += size
    mc = total / samples
    return mc, closed, abs(mc - closed) / abs(closed)

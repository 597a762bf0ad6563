"""Contaminated-dataset generators for each adversary model.

Oblivious generators draw everything the adversary commits to (mean
direction, corrupted indices and rows) from a dedicated corruption stream
before any good row is drawn.  Good rows come from a separate stream that
callers may override, which is how the obliviousness contract is tested.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import numpy as np

from rmt.core import Dataset, RngLike, RngStream, TestParams, corrupt_count
from rmt.errors import ArgumentError, PreconditionError


class Hypothesis(str, enum.Enum):
    NULL = "Null"
    ALT = "Alt"


class Adversary(str, enum.Enum):
    CLEAN = "clean"
    HUBER_LB = "huber_lb"
    OBLIVIOUS_LB = "oblivious_lb"
    OBLIVIOUS_NEGMU = "oblivious_negmu"
    ADAPTIVE_ANTIALIGN = "adaptive_antialign"
    REPLAY = "replay"


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A dataset plus simulation-only ground truth.

    Testers accept a plain ``Dataset``; pass ``labeled.data`` to them.
    """

    data: Dataset
    bad_mask: np.ndarray
    hypothesis: Hypothesis
    mu: np.ndarray
    adversary: Adversary
    eps: float = 0.0

    def __post_init__(self) -> None:
        mask = np.array(self.bad_mask, dtype=bool, copy=True)
        if mask.shape != (self.data.n,):
            raise ArgumentError("bad_mask length must equal n")
        mask.setflags(write=False)
        object.__setattr__(self, "bad_mask", mask)
        mu = np.array(self.mu, dtype=np.float64, copy=True)
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def bad_rows(self) -> np.ndarray:
        return self.data.points[self.bad_mask]

    @property
    def good_rows(self) -> np.ndarray:
        return self.data.points[~self.bad_mask]


@dataclass(frozen=True)
class ObliviousLBParams:
    """Coupling coefficient beta for the oblivious lower-bound construction."""

    beta: float
    alpha: float
    eps: float
    n: int
    d: int

    def __post_init__(self) -> None:
        if self.beta < 0 or not math.isfinite(self.beta):
            raise ArgumentError("beta must be a finite nonnegative number")

    @property
    def in_regime(self) -> bool:
        """Whether beta <= 0.1/n, where the chi-square analysis applies."""
        return self.beta <= 0.1 / self.n


# ---------------------------------------------------------------------------
# Stream discipline


def _root(rng: RngLike) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, np.random.Generator):
        return RngStream(int(rng.integers(0, 2**63)))
    return RngStream(0 if rng is None else int(rng))


def _streams(rng: RngLike, good_rng: RngLike) -> tuple[np.random.Generator, np.random.Generator]:
    root = _root(rng)
    corrupt = root.split("corruption").generator()
    good = (root.split("good") if good_rng is None else _root(good_rng)).generator()
    return corrupt, good


def _unit(gen: np.random.Generator, d: int) -> np.ndarray:
    u = gen.standard_normal(d)
    return u / np.linalg.norm(u)


def _assemble(n: int, d: int, bad_idx: np.ndarray, bad_rows: np.ndarray, good_rows: np.ndarray):
    x = np.empty((n, d))
    mask = np.zeros(n, dtype=bool)
    mask[bad_idx] = True
    x[mask] = bad_rows
    x[~mask] = good_rows
    return x, mask


# ---------------------------------------------------------------------------
# Generators


def gen_clean(
    params: TestParams,
    hypothesis: Hypothesis,
    mu_direction: Optional[np.ndarray] = None,
    rng: RngLike = None,
    *,
    uniform_norm: bool = False,
    good_rng: RngLike = None,
) -> LabeledDataset:
    """Uncorrupted samples from N(0, I) or N(mu, I) with ||mu|| = alpha.

    With ``uniform_norm`` the alternative norm is uniform on [alpha, 2 alpha].
    """
    d, n = params.d, params.n
    corrupt, good = _streams(rng, good_rng)
    mu = np.zeros(d)
    if Hypothesis(hypothesis) is Hypothesis.ALT:
        if mu_direction is None:
            u = _unit(corrupt, d)
        else:
            u = np.asarray(mu_direction, dtype=np.float64)
            if u.shape != (d,) or not np.isclose(np.linalg.norm(u), 1.0):
                raise ArgumentError("mu_direction must be a unit vector of length d")
        norm = corrupt.uniform(params.alpha, 2 * params.alpha) if uniform_norm else params.alpha
        mu = norm * u
    x = good.standard_normal((n, d)) + mu
    return LabeledDataset(Dataset(x), np.zeros(n, bool), Hypothesis(hypothesis), mu, Adversary.CLEAN, params.eps)


def gen_huber_lb(params: TestParams, rng: RngLike = None, *, good_rng: RngLike = None) -> LabeledDataset:
    """The Huber lower-bound mixture (1-eps) N(alpha v, I) + eps N(-((1-eps)/eps) alpha v, I).

    v ~ N(0, I/d).  The bad component holds exactly floor(eps n) rows at
    uniformly random positions, i.e. the mixture conditioned on its count.
    """
    eps, alpha, d, n = params.eps, params.alpha, params.d, params.n
    if eps <= 0:
        raise ArgumentError("the Huber mixture is undefined at eps = 0")
    corrupt, good = _streams(rng, good_rng)
    v = corrupt.standard_normal(d) / math.sqrt(d)
    k = corrupt_count(eps, n)
    bad_idx = corrupt.choice(n, size=k, replace=False)
    bad_rows = corrupt.standard_normal((k, d)) - ((1 - eps) / eps) * alpha * v
    mu = alpha * v
    good_rows = good.standard_normal((n - k, d)) + mu
    x, mask = _assemble(n, d, bad_idx, bad_rows, good_rows)
    return LabeledDataset(Dataset(x), mask, Hypothesis.ALT, mu, Adversary.HUBER_LB, eps)


def gen_oblivious_lb(
    params: TestParams,
    lb: Optional[ObliviousLBParams] = None,
    rng: RngLike = None,
    *,
    good_rng: RngLike = None,
) -> LabeledDataset:
    """The oblivious lower-bound construction.

    A random set A of floor(eps n) indices gets N(0, I) rows with sum R_A;
    z ~ N(0, alpha^2/d I); the remaining rows are N(-beta R_A - z, I).
    Everything before the last step comes from the corruption stream.
    """
    from rmt.lower_bounds import ObliviousLBConfig, set_beta

    eps, alpha, d, n = params.eps, params.alpha, params.d, params.n
    if lb is None:
        if alpha**2 * n >= d * corrupt_count(eps, n) / n:
            raise PreconditionError(f"beta is undefined: alpha^2 n = {alpha**2 * n:g} >= d k/n = {d * corrupt_count(eps, n) / n:g}")
        # beta at the realised corruption rate floor(eps n)/n
        beta = set_beta(ObliviousLBConfig(n=n, d=d, eps=corrupt_count(eps, n) / n, alpha=alpha))
        lb = ObliviousLBParams(beta=beta, alpha=alpha, eps=eps, n=n, d=d)
    corrupt, good = _streams(rng, good_rng)
    k = corrupt_count(eps, n)
    bad_idx = corrupt.choice(n, size=k, replace=False)
    bad_rows = corrupt.standard_normal((k, d))
    r_a = bad_rows.sum(axis=0)
    z = corrupt.standard_normal(d) * (alpha / math.sqrt(d))
    mu = -lb.beta * r_a - z
    good_rows = good.standard_normal((n - k, d)) + mu
    x, mask = _assemble(n, d, bad_idx, bad_rows, good_rows)
    return LabeledDataset(Dataset(x), mask, Hypothesis.ALT, mu, Adversary.OBLIVIOUS_LB, eps)


def negmu_norm_band(d: int, n: int) -> float:
    """Half-width 10 sqrt(d log n) of the squared-norm band kept by the negmu attack."""
    return 10.0 * math.sqrt(d * math.log(max(n, 2)))


def gen_oblivious_negmu(params: TestParams, rng: RngLike = None, *, good_rng: RngLike = None) -> LabeledDataset:
    """Oblivious attack that cancels the alternative mean.

    The adversary knows mu = alpha u but not the good draws.  Each bad row is
    N(0, I) with its u-coordinate set to -alpha/eps; if the squared norm
    leaves d +/- 10 sqrt(d log n), the orthogonal part is rescaled onto the
    nearest edge of that band.
    """
    eps, alpha, d, n = params.eps, params.alpha, params.d, params.n
    if eps <= 0:
        raise ArgumentError("the negmu attack needs eps > 0")
    corrupt, good = _streams(rng, good_rng)
    u = _unit(corrupt, d)
    mu = alpha * u
    k = corrupt_count(eps, n)
    bad_idx = corrupt.choice(n, size=k, replace=False)
    g = corrupt.standard_normal((k, d))
    shift = -alpha / eps
    ortho = g - np.outer(g @ u, u)
    band = negmu_norm_band(d, n)
    ortho_sq = np.einsum("ij,ij->i", ortho, ortho)
    target = np.clip(ortho_sq + shift**2, d - band, d + band) - shift**2
    scale = np.sqrt(np.maximum(target, 0.0) / np.maximum(ortho_sq, 1e-300))
    bad_rows = ortho * scale[:, None] + shift * u
    good_rows = good.standard_normal((n - k, d)) + mu
    x, mask = _assemble(n, d, bad_idx, bad_rows, good_rows)
    return LabeledDataset(Dataset(x), mask, Hypothesis.ALT, mu, Adversary.OBLIVIOUS_NEGMU, eps)


def gen_adaptive_antialign(
    params: TestParams,
    hypothesis: Hypothesis = Hypothesis.NULL,
    rng: RngLike = None,
    *,
    good_rng: RngLike = None,
) -> LabeledDataset:
    """Adaptive attack: sees the good draws, then replaces floor(eps n) of them.

    Every replacement has norm sqrt(d) and points along -Sum(G), where G is
    the set of surviving good rows (which under the alternative carries the
    (n - k) mu drift).  This deliberately breaks obliviousness.
    """
    eps, alpha, d, n = params.eps, params.alpha, params.d, params.n
    if eps <= 0:
        raise ArgumentError("the anti-align attack needs eps > 0")
    corrupt, good = _streams(rng, good_rng)
    hyp = Hypothesis(hypothesis)
    mu = alpha * _unit(corrupt, d) if hyp is Hypothesis.ALT else np.zeros(d)
    x = good.standard_normal((n, d)) + mu
    k = corrupt_count(eps, n)
    # The replaced positions are chosen after seeing the draws.
    bad_idx = np.sort(good.choice(n, size=k, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[bad_idx] = True
    sum_g = x[~mask].sum(axis=0)
    direction = -sum_g / np.linalg.norm(sum_g)
    x[mask] = math.sqrt(d) * direction
    return LabeledDataset(Dataset(x), mask, hyp, mu, Adversary.ADAPTIVE_ANTIALIGN, eps)


# ---------------------------------------------------------------------------
# Serialization

_MAGIC = b"RMT1"
_HEADER = struct.Struct("<4sQQQQB")


def dumps_dataset(ld: LabeledDataset) -> bytes:
    """Binary form: header, row-major float64 points, then a bad-row bitset."""
    frac = Fraction(ld.eps).limit_denominator(10**9)
    hyp = 1 if ld.hypothesis is Hypothesis.ALT else 0
    header = _HEADER.pack(_MAGIC, ld.data.n, ld.data.d, frac.numerator, frac.denominator, hyp)
    body = np.ascontiguousarray(ld.data.points, dtype="<f8").tobytes()
    bits = np.packbits(ld.bad_mask.astype(np.uint8), bitorder="little").tobytes()
    return header + body + bits


def loads_dataset(blob: bytes) -> LabeledDataset:
    if len(blob) < _HEADER.size:
        raise ArgumentError("truncated dataset header")
    magic, n, d, num, den, hyp = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ArgumentError(f"bad magic {magic!r}")
    if den == 0 or hyp not in (0, 1):
        raise ArgumentError("corrupt dataset header")
    n_floats = n * d
    n_bits = (n + 7) // 8
    expected = _HEADER.size + 8 * n_floats + n_bits
    if len(blob) != expected:
        raise ArgumentError(f"dataset is {len(blob)} bytes, expected {expected}")
    start = _HEADER.size
    pts = np.frombuffer(blob, dtype="<f8", count=n_floats, offset=start).reshape(n, d)
    bits = np.frombuffer(blob, dtype=np.uint8, count=n_bits, offset=start + 8 * n_floats)
    mask = np.unpackbits(bits, count=n, bitorder="little").astype(bool)
    return LabeledDataset(
        Dataset(pts),
        mask,
        Hypothesis.ALT if hyp else Hypothesis.NULL,
        np.zeros(d),
        Adversary.REPLAY,
        num / den,
    )


def write_dataset(ld: LabeledDataset, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dumps_dataset(ld))


def read_dataset(path: Union[str, Path]) -> LabeledDataset:
    return loads_dataset(Path(path).read_bytes())


def to_csv(ld: LabeledDataset) -> str:
    """CSV with one row per point: x0..x{d-1}, then bad as 0/1."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{j}" for j in range(ld.data.d)] + ["bad"])
    for row, bad in zip(ld.data.points, ld.bad_mask):
        writer.writerow([repr(float(v)) for v in row] + [int(bad)])
    return buf.getvalue()

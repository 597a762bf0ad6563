"""Numeric substrate: datasets, subset and weighted sums, Gram matrices,
top eigenpairs, and seeded sampling."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence, Union

import numpy as np

from rmt.errors import ArgumentError, ConvergenceError

_MASK64 = (1 << 64) - 1


def corrupt_count(eps: float, n: int) -> int:
    """floor(eps * n), robust to representation error (0.29 * 100 -> 29)."""
    return int(math.floor(eps * n + 1e-9))


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable n x d sample matrix."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ArgumentError(f"points must be a non-empty n x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ArgumentError("points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        """Rows at ``indices``, as a new dataset."""
        idx = _check_indices(self.n, indices)
        return Dataset(self.points[idx])

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class TestParams:
    """Problem parameters shared by the testers."""

    __test__ = False  # keep pytest from collecting this class

    d: int
    n: int
    eps: float
    alpha: float
    delta: float = 0.01
    kappa: float = 3.0

    def __post_init__(self) -> None:
        if self.d < 1 or self.n < 1:
            raise ArgumentError("d and n must be positive")
        if not 0.0 <= self.eps < 1.0:
            raise ArgumentError(f"eps must lie in [0, 1), got {self.eps}")
        if self.alpha <= 0:
            raise ArgumentError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.delta < 1.0:
            raise ArgumentError(f"delta must lie in (0, 1), got {self.delta}")
        if self.kappa <= 0:
            raise ArgumentError("kappa must be positive")
        if self.eps > self.alpha:
            raise ArgumentError(f"eps={self.eps} exceeds alpha={self.alpha}; testing is impossible")

    @property
    def n_bad(self) -> int:
        return corrupt_count(self.eps, self.n)


def _tag_to_int(tag: Union[int, str]) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    """A counter-based random stream keyed by ``(seed, stream_id)``.

    The key drives a Philox generator, so equal keys reproduce identical
    variates and distinct keys give independent streams.  ``split`` derives
    child streams deterministically from a tag.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))

    def split(self, *tags: Union[int, str]) -> "RngStream":
        words = [self.stream_id >> 32, self.stream_id & 0xFFFFFFFF]
        for tag in tags:
            t = _tag_to_int(tag)
            words += [t >> 32, t & 0xFFFFFFFF]
        child = np.random.SeedSequence(words).generate_state(2, np.uint32)
        return RngStream(self.seed, (int(child[0]) << 32) | int(child[1]))


RngLike = Union[RngStream, np.random.Generator, int, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Accept a stream, a live generator, an integer seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngStream(0 if rng is None else int(rng)).generator()
    raise ArgumentError(f"cannot build a generator from {type(rng).__name__}")


class Decision(str, enum.Enum):
    ACCEPT_NULL = "AcceptNull"
    REJECT = "Reject"


@dataclass
class Verdict:
    decision: Decision
    statistics: dict[str, Any] = field(default_factory=dict)

    @property
    def rejected(self) -> bool:
        return self.decision is Decision.REJECT

    def to_record(self) -> dict[str, Any]:
        return {"decision": self.decision.value, **self.statistics}


# ---------------------------------------------------------------------------
# Validation helpers


def _check_indices(n: int, indices: Iterable[int] | np.ndarray) -> np.ndarray:
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices)
    if idx.size == 0:
        return np.zeros(0, dtype=np.intp)
    if idx.dtype == bool:
        if idx.shape != (n,):
            raise ArgumentError("boolean mask has the wrong length")
        return np.flatnonzero(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ArgumentError("indices must be integers")
    if idx.min() < 0 or idx.max() >= n:
        raise ArgumentError(f"index out of range for n={n}")
    return idx.astype(np.intp)


def check_weights(w: Any, n: int) -> np.ndarray:
    """Return ``w`` as a float vector after checking length and range."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.shape != (n,):
        raise ArgumentError(f"weights have shape {arr.shape}, expected ({n},)")
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ArgumentError("weights must lie in [0, 1]")
    return arr


def _points(data: Dataset | np.ndarray) -> np.ndarray:
    return data.points if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)


# ---------------------------------------------------------------------------
# Sums and matrices


def sum_subset(data: Dataset, indices: Iterable[int] | np.ndarray) -> np.ndarray:
    """Sum of the rows indexed by ``indices``; the empty sum is zero."""
    x = _points(data)
    idx = _check_indices(x.shape[0], indices)
    if idx.size == 0:
        return np.zeros(x.shape[1])
    return x[idx].sum(axis=0)


def weighted_sum(data: Dataset, w: Any) -> np.ndarray:
    """sum_i sqrt(w_i) X_i."""
    x = _points(data)
    ww = check_weights(w, x.shape[0])
    return np.sqrt(ww) @ x


def gram(data: Dataset, w: Any) -> np.ndarray:
    """Weighted Gram matrix with entries sqrt(w_i w_j) <X_i, X_j>."""
    x = _points(data)
    s = np.sqrt(check_weights(w, x.shape[0]))
    xs = x * s[:, None]
    g = xs @ xs.T
    return (g + g.T) / 2.0


def second_moment(data: Dataset, w: Any) -> np.ndarray:
    """sum_i w_i X_i X_i^T."""
    x = _points(data)
    ww = check_weights(w, x.shape[0])
    m = (x * ww[:, None]).T @ x
    return (m + m.T) / 2.0


def top_singular_pair(
    a: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 1000,
    rng: RngLike = None,
) -> tuple[float, np.ndarray]:
    """Largest-magnitude eigenvalue of a symmetric matrix and its eigenvector.

    Plain power iteration on ``A``.  Each step also checks the Rayleigh-Ritz
    pair of ``span{x, Ax}``, so the eigenvalue sign comes from a Rayleigh
    quotient and a +/- lambda tie still yields an eigenvector.  Success means
    ``||Av - lambda v|| <= tol * ||A||_F``.  Returns ``(|lambda|, v)``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ArgumentError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("matrix entries must be finite")
    fro = float(np.linalg.norm(a))
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-10 * max(fro, 1.0)):
        raise ArgumentError("matrix must be symmetric")
    if tol <= 0 or max_iter < 1:
        raise ArgumentError("tol must be positive and max_iter at least 1")

    gen = as_generator(rng)
    size = a.shape[0]
    x = gen.standard_normal(size)
    x /= np.linalg.norm(x)
    if fro == 0.0:
        return 0.0, x

    target = tol * fro
    ax = a @ x
    best: tuple[float, float, np.ndarray] = (math.inf, 0.0, x)
    for _ in range(max_iter):
        theta0 = float(x @ ax)
        r = ax - theta0 * x
        rnorm = float(np.linalg.norm(r))
        if rnorm < best[0]:
            best = (rnorm, theta0, x)
        if rnorm <= target:
            return abs(theta0), x
        aax = a @ ax
        # Ritz pair on span{x, Ax}: resolves a +/- lambda tie that plain
        # power iteration only oscillates inside.
        q = r / rnorm
        aq = (aax - theta0 * ax) / rnorm
        t01 = float(q @ ax)
        t11 = float(q @ aq)
        evals, evecs = np.linalg.eigh(np.array([[theta0, t01], [t01, t11]]))
        pick = int(np.argmax(np.abs(evals)))
        y0, y1 = evecs[:, pick]
        ritz = y0 * x + y1 * q
        ritz_res = float(np.linalg.norm(y0 * ax + y1 * aq - evals[pick] * ritz))
        if ritz_res < best[0]:
            best = (ritz_res, float(evals[pick]), ritz)
        if ritz_res <= target:
            return abs(float(evals[pick])), ritz
        scale = float(np.linalg.norm(ax))
        if scale == 0.0:
            x = gen.standard_normal(size)
            x /= np.linalg.norm(x)
            ax = a @ x
            continue
        x, ax = ax / scale, aax / scale

    raise ConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iter} steps (residual {best[0]:.3g})",
        value=abs(best[1]),
        vector=best[2],
        residual=best[0],
    )


# ---------------------------------------------------------------------------
# Sampling


def sample_gaussian(mu: Any, count: int, rng: RngLike) -> Dataset:
    """``count`` i.i.d. rows from N(mu, I)."""
    if count < 1:
        raise ArgumentError("count must be at least 1")
    m = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    gen = as_generator(rng)
    return Dataset(gen.standard_normal((count, m.shape[0])) + m)


def sample_hypergeometric(n: int, k1: int, k2: int, rng: RngLike, size: int | None = None):
    """|S ∩ T| for independent uniform subsets of [n] with |S| = k1 and |T| = k2."""
    if n < 0 or k1 < 0 or k2 < 0:
        raise ArgumentError("counts must be nonnegative")
    if k1 > n or k2 > n:
        raise ArgumentError(f"subset sizes ({k1}, {k2}) exceed n={n}")
    gen = as_generator(rng)
    if k1 == 0 or k2 == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    if k1 == n:
        return k2 if size is None else np.full(size, k2, dtype=np.int64)
    draws = gen.hypergeometric(k2, n - k2, k1, size=size)
    return int(draws) if size is None else draws.astype(np.int64)

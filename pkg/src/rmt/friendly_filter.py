"""Friendliness and balancedness checks, Filter_gamma, and the sample-splitting
filters that make an obliviously contaminated dataset friendly.

The proof constants (10^11, 10^100, ...) are replaced by the named fields of
``FilterConstants`` and ``ScheduleConstants``; the algorithm structure is
kept.  Exact searches are available at oracle scale (n <= 16 for pair
checks, |A| <= 12 for filter collections); larger inputs use budgeted
randomized search.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from rmt.core import Dataset, RngLike, _check_indices, _points, as_generator, corrupt_count
from rmt.errors import ArgumentError, CapacityError, ExhaustionError

EXACT_PAIR_LIMIT = 16
EXACT_COLLECTION_LIMIT = 12


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class Exact:
    """Exhaustive search; only allowed on small inputs."""


@dataclass(frozen=True)
class Randomized:
    """Random restarts plus alternating greedy improvement.

    Sound for violations (anything reported is real), incomplete for ok.
    """

    trials: int = 10_000

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ArgumentError("trials must be at least 1")


SearchMode = Union[Exact, Randomized]


@dataclass(frozen=True)
class BalancedParams:
    lam: float
    m: int
    k: int

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ArgumentError("lambda must be positive")
        if self.m < 1 or self.k < 1:
            raise ArgumentError("m and k must be positive")
        if self.k > self.m * self.m:
            raise ArgumentError(f"k={self.k} exceeds m^2={self.m * self.m}")


@dataclass(frozen=True)
class PairWitness:
    """Disjoint subsets with their inner product and the bound it is compared to."""

    s1: tuple[int, ...]
    s2: tuple[int, ...]
    value: float
    bound: float

    @property
    def ratio(self) -> float:
        if self.bound > 0:
            return abs(self.value) / self.bound
        return math.inf if self.value != 0 else 0.0


@dataclass(frozen=True)
class FriendlinessReport:
    ok: bool
    kappa: float
    worst_pair: Optional[PairWitness]
    worst_inner_product: tuple[int, int, float]
    worst_norm: tuple[int, float]
    clauses: tuple[bool, bool, bool]


@dataclass(frozen=True)
class FilterSet:
    """Directions Sum(T_i)/||Sum(T_i)|| over a reference dataset, plus gamma."""

    directions: tuple[tuple[int, ...], ...]
    gamma: float

    def __post_init__(self) -> None:
        dirs = tuple(tuple(int(i) for i in t) for t in self.directions)
        if any(len(t) == 0 for t in dirs):
            raise ArgumentError("filter direction subsets must be nonempty")
        if not self.gamma >= 0 or math.isnan(self.gamma):
            raise ArgumentError("gamma must be nonnegative")
        object.__setattr__(self, "directions", dirs)

    @property
    def total_size(self) -> int:
        return sum(len(t) for t in self.directions)

    def to_json(self) -> str:
        return json.dumps({"gamma": self.gamma, "directions": [list(t) for t in self.directions]})

    @classmethod
    def from_json(cls, text: str) -> "FilterSet":
        obj = json.loads(text)
        try:
            return cls(tuple(tuple(t) for t in obj["directions"]), float(obj["gamma"]))
        except (KeyError, TypeError) as exc:
            raise ArgumentError(f"malformed filter record: {exc}") from exc


@dataclass(frozen=True)
class SearchBudget:
    """Caps on candidate filter collections and on random subsets per compression.

    ``pair_restarts`` bounds the randomized witness search inside each check.
    """

    max_collections: int = 10_000
    max_subsets: int = 1_000
    pair_restarts: int = 200

    def __post_init__(self) -> None:
        if min(self.max_collections, self.max_subsets, self.pair_restarts) < 1:
            raise ArgumentError("budget entries must be positive")


@dataclass(frozen=True)
class FilterConstants:
    """Desk-scale stand-ins for the proof constants of the single iteration.

    tau = ceil(tau_const * s / log n); gamma = gamma_const * sqrt(lam / m);
    a witness pair in A has sizes round(p s) and round(p k / s) (at least 1)
    and counts when its inner product reaches check_const * sqrt(lam a1 a2 d).
    ``compress_C`` is the C of the compression step.
    """

    tau_const: float = 1.0 / 8.0
    gamma_const: float = 3.0
    check_const: float = 0.5
    compress_C: float = 1.0

    def __post_init__(self) -> None:
        if min(self.tau_const, self.gamma_const, self.check_const, self.compress_C) <= 0:
            raise ArgumentError("filter constants must be positive")


@dataclass(frozen=True)
class ScheduleConstants:
    """Doubling schedule: k starts at ceil(k_const m L), s at ceil(s_const L),
    with L = log(|S| m / delta)."""

    k_const: float = 0.1
    s_const: float = 0.1

    def __post_init__(self) -> None:
        if self.k_const <= 0 or self.s_const <= 0:
            raise ArgumentError("schedule constants must be positive")


class AccessLog:
    """Records which rows an algorithm read, tagged with the current phase."""

    def __init__(self) -> None:
        self.phase = "search"
        self.events: list[tuple[str, np.ndarray]] = []

    def record(self, rows: np.ndarray) -> None:
        self.events.append((self.phase, np.array(rows, dtype=np.intp, copy=True)))

    def rows(self, phase: Optional[str] = None) -> set[int]:
        out: set[int] = set()
        for ph, idx in self.events:
            if phase is None or ph == phase:
                out.update(int(i) for i in idx)
        return out


class _RowReader:
    def __init__(self, x: np.ndarray, log: Optional[AccessLog]):
        self._x = x
        self._log = log

    def read(self, rows: np.ndarray) -> np.ndarray:
        if self._log is not None:
            self._log.record(rows)
        return self._x[rows]


@dataclass(frozen=True)
class IterationResult:
    survivors: np.ndarray
    held_out: np.ndarray
    removed: np.ndarray
    filters: FilterSet
    candidates: int


@dataclass(frozen=True)
class SplittingResult:
    survivors: np.ndarray
    held_out: np.ndarray
    removed: np.ndarray
    filters: tuple[FilterSet, ...]
    schedule: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class PipelineResult:
    survivors: np.ndarray
    prefilter_removed: np.ndarray
    splitting: SplittingResult

    @property
    def removed(self) -> np.ndarray:
        """Points deleted by a rule (held-out split points are not counted)."""
        return np.union1d(self.prefilter_removed, self.splitting.removed)


# ---------------------------------------------------------------------------
# Pair search engines
#
# Both maximise |<Sum(S1), Sum(S2)>| / bound(|S1|, |S2|) over disjoint pairs
# whose sizes are allowed.  For a fixed S1 the best S2 of size k2 is the k2
# largest (or smallest) projections onto Sum(S1), so the exact engine only
# enumerates S1.


def _subset_masks(n: int, max_size: int) -> np.ndarray:
    codes = np.arange(1, 1 << n, dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    return masks[masks.sum(axis=1) <= max_size]


def _size_tables(n: int, allowed: Callable[[int, int], bool], bound: Callable[[int, int], float]):
    ok = np.zeros((n + 1, n + 1), dtype=bool)
    bd = np.ones((n + 1, n + 1))
    for k1 in range(1, n):
        for k2 in range(1, n - k1 + 1):
            if allowed(k1, k2):
                ok[k1, k2] = True
                bd[k1, k2] = bound(k1, k2)
    return ok, bd


def _ratio(value: np.ndarray, bound: float) -> np.ndarray:
    if bound > 0:
        return np.abs(value) / bound
    return np.where(value != 0, np.inf, 0.0)


def exact_worst_pair(
    x: np.ndarray,
    allowed: Callable[[int, int], bool],
    bound: Callable[[int, int], float],
    limit: int = EXACT_PAIR_LIMIT,
) -> Optional[PairWitness]:
    """The allowed disjoint pair with the largest ratio, found exhaustively."""
    n = x.shape[0]
    if n > limit:
        raise CapacityError(f"exact pair search is limited to n <= {limit}, got n={n}")
    ok, bd = _size_tables(n, allowed, bound)
    if not ok.any():
        return None
    g = x @ x.T
    best: Optional[tuple[float, PairWitness]] = None
    masks_all = _subset_masks(n, int(np.nonzero(ok.any(axis=1))[0].max()))
    sizes = masks_all.sum(axis=1)
    for k1 in np.nonzero(ok.any(axis=1))[0]:
        masks = masks_all[sizes == k1]
        proj = masks.astype(np.float64) @ g
        avail_idx = np.nonzero(~masks)[1].reshape(len(masks), n - k1)
        avail = np.take_along_axis(proj, avail_idx, axis=1)
        order = np.argsort(-avail, axis=1, kind="stable")
        desc = np.take_along_axis(avail, order, axis=1)
        top = np.cumsum(desc, axis=1)
        bot = np.cumsum(desc[:, ::-1], axis=1)
        for k2 in np.nonzero(ok[k1])[0]:
            hi, lo = top[:, k2 - 1], bot[:, k2 - 1]
            use_lo = -lo > hi
            val = np.where(use_lo, lo, hi)
            r = _ratio(val, bd[k1, k2])
            row = int(np.argmax(r))
            if best is None or r[row] > best[0]:
                cols = order[row, ::-1][:k2] if use_lo[row] else order[row, :k2]
                s2 = tuple(sorted(int(c) for c in avail_idx[row, cols]))
                s1 = tuple(int(c) for c in np.flatnonzero(masks[row]))
                best = (float(r[row]), PairWitness(s1, s2, float(val[row]), float(bd[k1, k2])))
    return None if best is None else best[1]


def _best_partner(
    proj: np.ndarray,
    excluded: np.ndarray,
    k_fixed: int,
    allowed_sizes: np.ndarray,
    bd_row: np.ndarray,
) -> tuple[float, float, np.ndarray]:
    """Best subset among non-excluded rows to pair with a fixed side of size k_fixed."""
    cand = np.flatnonzero(~excluded)
    if cand.size == 0:
        return -1.0, 0.0, cand
    order = cand[np.argsort(-proj[cand], kind="stable")]
    vals = proj[order]
    top = np.cumsum(vals)
    bot = np.cumsum(vals[::-1])
    best = (-1.0, 0.0, cand[:0])
    for k2 in allowed_sizes:
        if k2 > cand.size:
            break
        hi, lo = top[k2 - 1], bot[k2 - 1]
        val, rows = (lo, order[::-1][:k2]) if -lo > hi else (hi, order[:k2])
        r = float(_ratio(np.array(val), bd_row[k2]))
        if r > best[0]:
            best = (r, float(val), rows)
    return best


def randomized_worst_pair(
    x: np.ndarray,
    allowed: Callable[[int, int], bool],
    bound: Callable[[int, int], float],
    trials: int,
    rng: RngLike = None,
    rounds: int = 3,
) -> Optional[PairWitness]:
    """Best allowed pair found by random starts and alternating greedy steps.

    The first starts are single points (the heavy-direction seeds); the rest
    are random subsets of a random allowed size.
    """
    n = x.shape[0]
    ok, bd = _size_tables(n, allowed, bound)
    if not ok.any():
        return None
    gen = as_generator(rng)
    k1_choices = np.nonzero(ok.any(axis=1))[0]
    best: Optional[tuple[float, PairWitness]] = None
    for t in range(trials):
        if t < n and ok[1].any():
            s1 = np.array([t])
        else:
            k1 = int(gen.choice(k1_choices))
            s1 = np.sort(gen.choice(n, size=k1, replace=False))
        for _ in range(rounds):
            k1 = s1.size
            mask1 = np.zeros(n, dtype=bool)
            mask1[s1] = True
            proj = x @ x[s1].sum(axis=0)
            r, val, s2 = _best_partner(proj, mask1, k1, np.nonzero(ok[k1])[0], bd[k1])
            if s2.size == 0:
                break
            if best is None or r > best[0]:
                best = (r, PairWitness(tuple(sorted(map(int, s1))), tuple(sorted(map(int, s2))), val, float(bd[k1, s2.size])))
            mask2 = np.zeros(n, dtype=bool)
            mask2[s2] = True
            proj2 = x @ x[s2].sum(axis=0)
            sizes1 = np.nonzero(ok[:, s2.size])[0]
            r1, _, new_s1 = _best_partner(proj2, mask2, s2.size, sizes1, bd[:, s2.size])
            if new_s1.size == 0 or set(new_s1.tolist()) == set(s1.tolist()):
                break
            s1 = np.sort(new_s1)
    return None if best is None else best[1]


def _worst_pair(x, allowed, bound, mode: SearchMode, rng: RngLike) -> Optional[PairWitness]:
    if isinstance(mode, Exact):
        return exact_worst_pair(x, allowed, bound)
    if isinstance(mode, Randomized):
        return randomized_worst_pair(x, allowed, bound, mode.trials, rng)
    raise ArgumentError(f"unknown search mode {mode!r}")


# ---------------------------------------------------------------------------
# Checks


def check_friendly(data: Dataset, eps: float, kappa: float, mode: SearchMode = Exact(), rng: RngLike = None) -> FriendlinessReport:
    """Evaluate the three clauses of kappa-friendliness.

    Clauses 2 and 3 are scanned exactly in either mode; clause 1 uses the
    chosen pair search over subsets of size at most floor(eps n).
    """
    x = _points(data)
    n, d = x.shape
    if kappa < 0:
        raise ArgumentError("kappa must be nonnegative")
    if isinstance(mode, Exact) and n > EXACT_PAIR_LIMIT:
        raise CapacityError(f"exact friendliness check is limited to n <= {EXACT_PAIR_LIMIT}")
    m = corrupt_count(eps, n)
    scale = max(math.sqrt(eps * n * d), eps * n)
    worst_pair = None
    clause1 = True
    if m >= 1 and n >= 2:
        worst_pair = _worst_pair(
            x,
            lambda k1, k2: k1 <= m and k2 <= m,
            lambda k1, k2: kappa * math.sqrt(k1 * k2) * scale,
            mode,
            rng,
        )
        clause1 = worst_pair is None or abs(worst_pair.value) <= worst_pair.bound
    g = x @ x.T
    norms = np.diag(g).copy()
    if n >= 2:
        off = np.abs(g)
        np.fill_diagonal(off, -1.0)
        i, j = np.unravel_index(int(np.argmax(off)), off.shape)
        worst_ip = (int(min(i, j)), int(max(i, j)), float(g[i, j]))
    else:
        worst_ip = (0, 0, 0.0)
    dev = np.abs(norms - d)
    worst_i = int(np.argmax(dev))
    clause2 = abs(worst_ip[2]) <= kappa * math.sqrt(d)
    clause3 = float(dev[worst_i]) <= kappa * math.sqrt(d)
    return FriendlinessReport(
        ok=clause1 and clause2 and clause3,
        kappa=kappa,
        worst_pair=worst_pair,
        worst_inner_product=worst_ip,
        worst_norm=(worst_i, float(norms[worst_i])),
        clauses=(clause1, clause2, clause3),
    )


def worst_balanced_pair(data: Dataset, p: BalancedParams, mode: SearchMode = Exact(), rng: RngLike = None) -> Optional[PairWitness]:
    """The pair with the largest ratio to sqrt(lam |S1| |S2| d), violating or not."""
    x = _points(data)
    n, d = x.shape
    if p.m > n:
        raise ArgumentError(f"m={p.m} exceeds n={n}")
    return _worst_pair(
        x,
        lambda k1, k2: k1 <= p.m and k2 <= p.m and k1 * k2 <= p.k,
        lambda k1, k2: math.sqrt(p.lam * k1 * k2 * d),
        mode,
        rng,
    )


def check_balanced(
    data: Dataset, p: BalancedParams, mode: SearchMode = Exact(), rng: RngLike = None
) -> Optional[tuple[tuple[int, ...], tuple[int, ...]]]:
    """A disjoint pair breaking (lam, m, k)-balancedness, or None."""
    w = worst_balanced_pair(data, p, mode, rng)
    if w is None or abs(w.value) <= w.bound:
        return None
    return w.s1, w.s2


# ---------------------------------------------------------------------------
# Filter_gamma


def _direction_matrix(ref: np.ndarray, directions: Sequence[Sequence[int]]) -> np.ndarray:
    out = np.empty((len(directions), ref.shape[1]))
    for row, t in enumerate(directions):
        s = ref[list(t)].sum(axis=0)
        norm = float(np.linalg.norm(s))
        if norm == 0.0:
            raise ArgumentError(f"direction {row} has a zero sum")
        out[row] = s / norm
    return out


def _keep_mask(x: np.ndarray, units: np.ndarray, gamma: float) -> np.ndarray:
    if units.shape[0] == 0 or x.shape[0] == 0:
        return np.ones(x.shape[0], dtype=bool)
    return np.abs(x @ units.T).max(axis=1) < gamma


def apply_filter(data: Dataset, f: FilterSet, reference: Dataset) -> np.ndarray:
    """Indices of rows of ``data`` outside Filter_gamma (removal is at >= gamma)."""
    x = _points(data)
    ref = _points(reference)
    for t in f.directions:
        _check_indices(ref.shape[0], t)
    units = _direction_matrix(ref, f.directions)
    return np.flatnonzero(_keep_mask(x, units, f.gamma))


# ---------------------------------------------------------------------------
# Compression


def _compress(
    x1: np.ndarray,
    x2: np.ndarray,
    theta: float,
    C: float,
    m: int,
    tries: int,
    gen: np.random.Generator,
) -> tuple[np.ndarray, int]:
    n1, n2 = x1.shape[0], x2.shape[0]
    size = min(n1, max(1, math.ceil(n1 * n2 / (C * m))))
    level = math.sqrt(theta) / (16.0 * math.sqrt(C * m))

    def score(rows: np.ndarray) -> int:
        s = x1[rows].sum(axis=0)
        norm = float(np.linalg.norm(s))
        if norm == 0.0:
            return -1
        return int(np.count_nonzero(x2 @ (s / norm) >= level))

    if size == n1:
        rows = np.arange(n1)
        return rows, score(rows)
    best_rows, best = np.arange(size), -1
    for _ in range(tries):
        rows = np.sort(gen.choice(n1, size=size, replace=False))
        c = score(rows)
        if c > best:
            best_rows, best = rows, c
            if c == n2:
                break
    return best_rows, best


def witness_compression(
    data: Dataset,
    S1: Sequence[int],
    S2: Sequence[int],
    theta: float,
    lam: float,
    C: float,
    m: Optional[int] = None,
    rng: RngLike = None,
    tries: int = 1_000,
) -> tuple[np.ndarray, int]:
    """A subset S1' of S1 of size <= ceil(|S1||S2|/(C m)) whose direction many
    points of S2 project onto.

    Keeps the best of ``tries`` random subsets of that size, scored by the
    count of v in S2 with <v, Sum(S1')/||Sum(S1')||> >= sqrt(theta)/(16 sqrt(C m)).
    Returns (S1' as data indices, that count).  ``m`` defaults to
    max(|S1|, |S2|).
    """
    x = _points(data)
    n, d = x.shape
    s1 = _check_indices(n, S1)
    s2 = _check_indices(n, S2)
    if s1.size == 0 or s2.size == 0:
        raise ArgumentError("S1 and S2 must be nonempty")
    if np.intersect1d(s1, s2).size:
        raise ArgumentError("S1 and S2 must be disjoint")
    if theta <= 0 or lam <= 0 or C < 1:
        raise ArgumentError("need theta > 0, lambda > 0 and C >= 1")
    mm = max(s1.size, s2.size) if m is None else int(m)
    if mm < 1:
        raise ArgumentError("m must be positive")
    ip = float(x[s1].sum(axis=0) @ x[s2].sum(axis=0))
    need = math.sqrt(theta * s1.size * s2.size * d)
    if ip < need:
        raise ArgumentError(f"<Sum(S1), Sum(S2)> = {ip:.6g} is below sqrt(theta |S1||S2| d) = {need:.6g}")
    rows, count = _compress(x[s1], x[s2], theta, C, mm, tries, as_generator(rng))
    return s1[rows], count


# ---------------------------------------------------------------------------
# Sample-splitting filters


def _collections(size: int, tau: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Collections of distinct nonempty subsets of range(size), by total size."""
    yield ()
    by_size = {r: list(itertools.combinations(range(size), r)) for r in range(1, min(size, tau) + 1)}

    def parts(total: int, largest: int) -> Iterator[list[int]]:
        if total == 0:
            yield []
            return
        for r in range(min(total, largest), 0, -1):
            for rest in parts(total - r, r):
                yield [r] + rest

    for total in range(1, tau + 1):
        for sizes in parts(total, min(total, size)):
            groups = [(r, sizes.count(r)) for r in sorted(set(sizes), reverse=True)]
            pools = [itertools.combinations(by_size[r], c) for r, c in groups]
            for combo in itertools.product(*[list(p) for p in pools]):
                yield tuple(t for group in combo for t in group)


def single_filtering_iteration(
    data: Dataset,
    lam: float,
    m: int,
    k: int,
    s: int,
    p: float,
    rng: RngLike = None,
    budget: SearchBudget = SearchBudget(),
    constants: FilterConstants = FilterConstants(),
    *,
    exact: Optional[bool] = None,
    log: Optional[AccessLog] = None,
    fallback_best: bool = False,
) -> IterationResult:
    """One split-and-filter round.

    Rows go to A with probability p.  A filter collection of total size at
    most tau is chosen by looking at A alone: the first collection, in the
    search order, after which A has no witness pair of sizes (a1, a2) above
    the check threshold.  B minus Filter_gamma is returned.  With ``exact``
    (the default when |A| <= 12) collections are enumerated by total size;
    otherwise they are grown one compressed witness at a time.  When no
    collection cleans A, ``fallback_best`` applies the one with the smallest
    residual witness ratio instead of raising.
    """
    x = _points(data)
    n, d = x.shape
    if lam <= 0 or m < 1 or k < 1 or s < 1 or not 0 < p < 1:
        raise ArgumentError("need lam > 0, m, k, s >= 1 and 0 < p < 1")
    gen = as_generator(rng)
    in_a = gen.random(n) < p
    a_idx, b_idx = np.flatnonzero(in_a), np.flatnonzero(~in_a)
    reader = _RowReader(x, log)
    if log is not None:
        log.phase = "search"
    xa = reader.read(a_idx) if a_idx.size else np.zeros((0, d))

    tau = math.ceil(constants.tau_const * s / math.log(max(n, 2)))
    gamma = constants.gamma_const * math.sqrt(lam / m)
    a1 = max(1, round(p * s))
    a2 = max(1, round(p * k / s))
    threshold = constants.check_const * math.sqrt(lam * a1 * a2 * d)
    theta = constants.check_const**2 * lam
    sizes = {(a1, a2), (a2, a1)}
    use_exact = (a_idx.size <= EXACT_COLLECTION_LIMIT) if exact is None else exact
    if use_exact and a_idx.size > EXACT_COLLECTION_LIMIT:
        raise CapacityError(f"exact collection search is limited to |A| <= {EXACT_COLLECTION_LIMIT}")

    def witness(units: np.ndarray) -> Optional[PairWitness]:
        live = np.flatnonzero(_keep_mask(xa, units, gamma))
        if live.size < a1 + a2:
            return None
        sub = xa[live]
        w = _worst_pair(
            sub,
            lambda k1, k2: (k1, k2) in sizes,
            lambda k1, k2: threshold,
            Exact() if live.size <= EXACT_PAIR_LIMIT else Randomized(budget.pair_restarts),
            gen,
        )
        if w is None or abs(w.value) < threshold:
            return None
        return PairWitness(tuple(int(live[i]) for i in w.s1), tuple(int(live[i]) for i in w.s2), w.value, w.bound)

    def units_of(coll) -> np.ndarray:
        return _direction_matrix(xa, coll) if coll else np.zeros((0, d))

    chosen: Optional[tuple] = None
    best: tuple[float, tuple] = (math.inf, ())
    candidates = 0
    if use_exact:
        for coll in _collections(a_idx.size, tau):
            if candidates >= budget.max_collections:
                break
            candidates += 1
            try:
                units = units_of(coll)
            except ArgumentError:
                continue
            w = witness(units)
            if w is None:
                chosen = coll
                break
            if w.ratio < best[0]:
                best = (w.ratio, coll)
    else:
        coll: list[tuple[int, ...]] = []
        while candidates < budget.max_collections:
            candidates += 1
            w = witness(units_of(coll))
            if w is None:
                chosen = tuple(coll)
                break
            if w.ratio < best[0]:
                best = (w.ratio, tuple(coll))
            s2 = np.array(w.s2)
            x2 = xa[s2] if w.value >= 0 else -xa[s2]
            rows, _ = _compress(xa[list(w.s1)], x2, theta, constants.compress_C, m, budget.max_subsets, gen)
            new = tuple(int(w.s1[r]) for r in rows)
            if sum(map(len, coll)) + len(new) > tau or new in coll:
                break
            coll.append(new)

    def as_filter(coll) -> FilterSet:
        return FilterSet(tuple(tuple(int(a_idx[i]) for i in t) for t in coll), gamma)

    if chosen is None and fallback_best:
        chosen = best[1]
    if chosen is None:
        raise ExhaustionError(
            f"no filter of total size <= {tau} cleans A within {candidates} candidates",
            best=as_filter(best[1]),
        )

    f = as_filter(chosen)
    if log is not None:
        log.phase = "apply"
    xb = reader.read(b_idx) if b_idx.size else np.zeros((0, d))
    keep = _keep_mask(xb, units_of(chosen), gamma)
    return IterationResult(
        survivors=b_idx[keep],
        held_out=a_idx,
        removed=b_idx[~keep],
        filters=f,
        candidates=candidates,
    )


def default_split_probability(m: int) -> float:
    """p = 1/(5 log^2 m), capped at 1/2."""
    lm = math.log(max(m, 2))
    return min(0.5, 1.0 / (5.0 * lm * lm))


def splitting_schedule(n: int, m: int, delta: float, constants: ScheduleConstants = ScheduleConstants()) -> list[tuple[int, int]]:
    """(k, s) pairs visited by the doubling loops."""
    if not 0 < delta < 1:
        raise ArgumentError("delta must lie in (0, 1)")
    big_l = math.log(max(n, 1) * m / delta)
    k = max(1, math.ceil(constants.k_const * m * big_l))
    s0 = max(1, math.ceil(constants.s_const * big_l))
    out = []
    while k <= m * m:
        s = s0
        while s <= m:
            out.append((k, s))
            s *= 2
        k *= 2
    return out


def full_sample_splitting(
    data: Dataset,
    lam: float,
    m: int,
    delta: float,
    rng: RngLike = None,
    budget: SearchBudget = SearchBudget(),
    constants: FilterConstants = FilterConstants(),
    schedule_constants: ScheduleConstants = ScheduleConstants(),
    *,
    p: Optional[float] = None,
    discard_split: bool = True,
    fallback_best: bool = False,
) -> SplittingResult:
    """Run the single iteration over the doubling schedule on the current set.

    Each round's held-out part A is dropped when ``discard_split`` is true;
    otherwise it rejoins the working set unfiltered.  Indices refer to rows
    of ``data``.
    """
    x = _points(data)
    n = x.shape[0]
    if m < 1 or lam <= 0:
        raise ArgumentError("need m >= 1 and lambda > 0")
    pp = default_split_probability(m) if p is None else p
    gen = as_generator(rng)
    sched = splitting_schedule(n, m, delta, schedule_constants)
    cur = np.arange(n)
    held: list[np.ndarray] = []
    removed: list[np.ndarray] = []
    filters: list[FilterSet] = []
    for k, s in sched:
        if cur.size < 2:
            break
        res = single_filtering_iteration(x[cur], lam, m, k, s, pp, gen, budget, constants, fallback_best=fallback_best)
        removed.append(cur[res.removed])
        filters.append(FilterSet(tuple(tuple(int(cur[i]) for i in t) for t in res.filters.directions), res.filters.gamma))
        if discard_split:
            held.append(cur[res.held_out])
            cur = cur[res.survivors]
        else:
            cur = np.sort(np.concatenate([cur[res.held_out], cur[res.survivors]]))
    empty = np.zeros(0, dtype=np.intp)
    return SplittingResult(
        survivors=np.sort(cur),
        held_out=np.sort(np.concatenate(held)) if held else empty,
        removed=np.sort(np.concatenate(removed)) if removed else empty,
        filters=tuple(filters),
        schedule=tuple(sched),
    )


# ---------------------------------------------------------------------------
# Prefilter and pipeline


def prefilter_thresholds(n: int, d: int, delta: float) -> tuple[float, float]:
    """(norm_dev, pair_bound) = (10 (sqrt(d L) + L), 10 sqrt(d) L), L = log(n / delta)."""
    big_l = math.log(max(n, 1) / delta)
    return 10.0 * (math.sqrt(d * big_l) + big_l), 10.0 * math.sqrt(d) * big_l


def prefilter_norms_pairs(data: Dataset, norm_dev: float, pair_bound: float) -> np.ndarray:
    """Drop rows with | ||X_i||^2 - d | >= norm_dev, then both rows of any
    surviving pair with |<X_i, X_j>| >= pair_bound."""
    if norm_dev <= 0 or pair_bound <= 0:
        raise ArgumentError("thresholds must be positive")
    x = _points(data)
    d = x.shape[1]
    sq = np.einsum("ij,ij->i", x, x)
    keep = np.flatnonzero(np.abs(sq - d) < norm_dev)
    if keep.size < 2:
        return keep
    sub = x[keep]
    g = np.abs(sub @ sub.T)
    np.fill_diagonal(g, 0.0)
    bad = (g >= pair_bound).any(axis=1)
    return keep[~bad]


@dataclass(frozen=True)
class PipelineConfig:
    """Settings of the friendly pipeline (prefilter then sample splitting).

    lam = min(d, lam_const kappa^2 max(1, eps n)) and m = max(1, floor(eps n)).
    """

    kappa: float = 3.0
    delta: float = 1e-3
    lam_const: float = 1.0
    discard_split: bool = True
    split_p: Optional[float] = None  # None: 1 / (5 log^2 m)
    fallback_best: bool = False
    budget: SearchBudget = field(default_factory=SearchBudget)
    constants: FilterConstants = field(default_factory=FilterConstants)
    schedule: ScheduleConstants = field(default_factory=ScheduleConstants)


def friendly_pipeline(data: Dataset, eps: float, rng: RngLike = None, config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Prefilter by norms and pairs, then run full sample splitting."""
    x = _points(data)
    n, d = x.shape
    norm_dev, pair_bound = prefilter_thresholds(n, d, config.delta)
    kept = prefilter_norms_pairs(x, norm_dev, pair_bound)
    pre_removed = np.setdiff1d(np.arange(n), kept)
    m = max(1, corrupt_count(eps, n))
    lam = min(float(d), config.lam_const * config.kappa**2 * max(1.0, eps * n))
    if kept.size >= 2:
        split = full_sample_splitting(
            x[kept], lam, m, config.delta, rng, config.budget, config.constants, config.schedule,
            p=config.split_p,
            discard_split=config.discard_split,
            fallback_best=config.fallback_best,
        )
        split = SplittingResult(
            survivors=kept[split.survivors],
            held_out=kept[split.held_out],
            removed=kept[split.removed],
            filters=tuple(FilterSet(tuple(tuple(int(kept[i]) for i in t) for t in f.directions), f.gamma) for f in split.filters),
            schedule=split.schedule,
        )
    else:
        empty = np.zeros(0, dtype=np.intp)
        split = SplittingResult(kept, empty, empty, (), ())
    return PipelineResult(survivors=split.survivors, prefilter_removed=pre_removed, splitting=split)

"""Independent oracles shared by the tests: exhaustive enumerators and the
regeneration contract for oblivious generators."""

import itertools
import math

import numpy as np

from rmt.contamination import gen_huber_lb, gen_oblivious_lb, gen_oblivious_negmu
from rmt.core import RngStream

ALT_GENERATORS = {
    "huber": lambda p, rng, good=None: gen_huber_lb(p, rng, good_rng=good),
    "oblivious_lb": lambda p, rng, good=None: gen_oblivious_lb(p, rng=rng, good_rng=good),
    "negmu": lambda p, rng, good=None: gen_oblivious_negmu(p, rng, good_rng=good),
}


def regenerate_bad_rows_equal(gen, params, seed):
    """Same corruption stream, different good stream: are bad rows bit-identical?"""
    a = gen(params, RngStream(seed), RngStream(seed + 1000, 1))
    b = gen(params, RngStream(seed), RngStream(seed + 2000, 2))
    return np.array_equal(a.bad_mask, b.bad_mask) and np.array_equal(a.bad_rows, b.bad_rows)


def balanced_violated(x, lam, m, k):
    """Every disjoint pair of nonempty subsets at once: Gram matrix of all
    2^n subset sums, masked to disjoint pairs within the size limits."""
    n, d = x.shape
    masks = np.arange(1 << n)
    member = (masks[:, None] >> np.arange(n)) & 1
    sums = member @ x
    sizes = member.sum(axis=1)
    inner = np.abs(sums @ sums.T)
    disjoint = (masks[:, None] & masks[None, :]) == 0
    ok_size = (sizes[:, None] >= 1) & (sizes[None, :] >= 1) & (sizes[:, None] <= m) & (sizes[None, :] <= m)
    ok_size &= sizes[:, None] * sizes[None, :] <= k
    bound = np.sqrt(lam * np.outer(sizes, sizes) * d)
    return bool(np.any(disjoint & ok_size & (inner > bound)))


def regularity_violated(x, eps, beta1, beta2):
    """True when some nonempty T with |T| <= floor(eps n) breaks a clause."""
    n, d = x.shape
    total = np.sum(x, axis=0)
    k = math.floor(eps * n + 1e-9)
    for size in range(1, k + 1):
        for t in itertools.combinations(range(n), size):
            rows = x[list(t)]
            s = np.sum(rows, axis=0)
            if abs(float(np.sum(rows * rows)) - size * d) > beta1:
                return True
            if abs(float(s @ s) - size * d) > beta2:
                return True
            if abs(abs(float(s @ total)) - size * d) > math.sqrt(n) * beta1:
                return True
    return False

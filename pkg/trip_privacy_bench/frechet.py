"""
Discrete Frechet distance between trajectories.

Distances are computed on the projected plane in meters. The dynamic program keeps
only two rows of the coupling table; many pairs of one O-D group are advanced
through the same recurrence at once by padding every trip with copies of its last
point, which leaves the discrete Frechet distance unchanged.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import PairBudgetExceeded
from .trajectory import GeoPoint, Trajectory

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 64
PAIR_CHUNK = 4096


@dataclass
class DistanceMatrix:
    ids: list
    values: np.ndarray
    seconds_per_kpair: float = 0.0

    @property
    def n(self):
        return len(self.ids)


def _as_planar(a, b, origin=None):
    if isinstance(a, Trajectory) and isinstance(b, Trajectory):
        if origin is None:
            p, q = a.coords[0], b.coords[0]
            origin = GeoPoint((p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0)
        return a.planar(origin), b.planar(origin)
    return np.asarray(a, dtype=float).reshape(-1, 2), np.asarray(b, dtype=float).reshape(-1, 2)


def _frechet_rows(A, B):
    """Rolling-row coupling DP for a batch of curve pairs.

    A has shape (P, n, 2) and B (P, m, 2); returns the (P,) distances.
    """
    P, n, _ = A.shape
    m = B.shape[1]
    prev = None
    for i in range(n):
        d = np.sqrt(np.sum((B - A[:, i, None, :]) ** 2, axis=2))
        cur = np.empty((P, m))
        if prev is None:
            cur[:, 0] = d[:, 0]
            for j in range(1, m):
                cur[:, j] = np.maximum(d[:, j], cur[:, j - 1])
        else:
            cur[:, 0] = np.maximum(d[:, 0], prev[:, 0])
            reach = np.minimum(prev[:, 1:], prev[:, :-1])
            for j in range(1, m):
                cur[:, j] = np.maximum(d[:, j], np.minimum(reach[:, j - 1], cur[:, j - 1]))
        prev = cur
    return prev[:, -1]


def discrete_frechet(a, b, origin=None):
    """Discrete Frechet distance in meters.

    Accepts two Trajectory objects (projected around a shared origin) or two
    planar (n, 2) arrays.
    """
    pa, pb = _as_planar(a, b, origin)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("Frechet distance needs non-empty curves")
    if len(pb) > len(pa):
        pa, pb = pb, pa
    return float(_frechet_rows(pa[None], pb[None])[0])


def brute_force_frechet(a, b, origin=None):
    """Exact minimum over all monotone couplings of the maximum pair distance."""
    pa, pb = _as_planar(a, b, origin)
    n, m = len(pa), len(pb)
    if n == 0 or m == 0:
        raise ValueError("Frechet distance needs non-empty curves")
    if n * m > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute_force_frechet limited to |a|*|b| <= {BRUTE_FORCE_LIMIT}, got {n * m}")
    d = cdist(pa, pb)
    best = np.inf

    def walk(i, j, worst):
        nonlocal best
        worst = max(worst, d[i, j])
        if worst >= best:
            return
        if i == n - 1 and j == m - 1:
            best = worst
            return
        if i + 1 < n:
            walk(i + 1, j, worst)
        if j + 1 < m:
            walk(i, j + 1, worst)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, worst)

    walk(0, 0, 0.0)
    return float(best)


def _pad(curves, length):
    out = np.empty((len(curves), length, 2))
    for k, c in enumerate(curves):
        out[k, :len(c)] = c
        out[k, len(c):] = c[-1]
    return out


def check_pair_budget(required, max_pairs_budget):
    if max_pairs_budget is not None and required > max_pairs_budget:
        raise PairBudgetExceeded(required, max_pairs_budget)


def pairwise_matrix(trips, max_pairs_budget=None, origin=None, jobs=1):
    """Symmetric Frechet distance matrix of trips.

    trips may be Trajectory objects (projected around origin, default: the first
    trip's start) or planar arrays. Refuses with PairBudgetExceeded when
    n(n-1)/2 exceeds max_pairs_budget.
    """
    trips = list(trips)
    if not trips:
        raise ValueError("pairwise_matrix needs at least one trip")
    n = len(trips)
    required = n * (n - 1) // 2
    check_pair_budget(required, max_pairs_budget)

    if isinstance(trips[0], Trajectory):
        origin = origin or trips[0].origin_point
        ids = [t.id for t in trips]
        curves = [t.planar(origin) for t in trips]
    else:
        ids = [str(i) for i in range(n)]
        curves = [np.asarray(c, dtype=float).reshape(-1, 2) for c in trips]

    values = np.zeros((n, n))
    started = time.perf_counter()
    if required:
        length = max(len(c) for c in curves)
        padded = _pad(curves, length)
        rows, cols = np.triu_indices(n, k=1)
        chunks = [(rows[s:s + PAIR_CHUNK], cols[s:s + PAIR_CHUNK])
                  for s in range(0, required, PAIR_CHUNK)]

        def run(chunk):
            r, c = chunk
            return _frechet_rows(padded[r], padded[c])

        if jobs > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(chunk) for chunk in chunks]
        for (r, c), dist in zip(chunks, results):
            values[r, c] = dist
            values[c, r] = dist
    elapsed = time.perf_counter() - started
    per_kpair = elapsed / required * 1000.0 if required else 0.0
    logger.debug("Frechet matrix for %d trips (%d pairs) in %.3f s", n, required, elapsed)
    return DistanceMatrix(ids, values, per_kpair)

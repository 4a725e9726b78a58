"""
Clustering-based trip anomaly detector.

Trips are grouped by O-D cells; within a group DBSCAN runs on the precomputed
discrete Frechet matrix. For ROC analysis every trip also gets a continuous
score: the Frechet distance to its score_k-th nearest neighbor (k-distance).
"""

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..config import DEFAULT_CELL_SIDE_M, DEFAULT_DBSCAN, DEFAULT_PAIR_BUDGET, MIN_PTS_CANDIDATES
from ..errors import ConfigError
from ..frechet import check_pair_budget, pairwise_matrix
from ..privacy import perturb_corpus
from ..trajectory import Label, group_by_od

logger = logging.getLogger(__name__)

NOISE = -1
ISOLATED_SCORE = float("inf")


@dataclass(frozen=True)
class DbscanParams:
    eps: float = DEFAULT_DBSCAN["eps"]
    min_pts: int = DEFAULT_DBSCAN["min_pts"]
    score_k: int = DEFAULT_DBSCAN["score_k"]

    def validate(self):
        if not self.eps > 0:
            raise ConfigError("dbscan eps must be > 0")
        if not 2 <= self.min_pts <= 10:
            raise ConfigError("dbscan min_pts must lie in [2, 10]")
        if self.score_k is not None and self.score_k < 1:
            raise ConfigError("dbscan score_k must be >= 1")
        return self

    @property
    def k(self):
        return self.score_k if self.score_k is not None else self.min_pts


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    core_flags: np.ndarray

    @property
    def noise(self):
        return set(np.flatnonzero(self.labels == NOISE).tolist())


def dbscan(matrix, params):
    """Density clustering on a precomputed distance matrix.

    Seeds are visited in ascending trip index and clusters expand breadth-first,
    so a border point joins the first cluster that reaches it.
    """
    params.validate()
    values = matrix.values if hasattr(matrix, "values") else np.asarray(matrix)
    n = values.shape[0]
    neighbors = [np.flatnonzero(values[i] <= params.eps) for i in range(n)]
    core = np.array([len(nb) >= params.min_pts for nb in neighbors], dtype=bool)
    labels = np.full(n, NOISE, dtype=int)
    cluster = 0
    for seed in range(n):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return ClusterAssignment(labels, core)


def outlier_scores(matrix, k):
    """k-distance of every trip: distance to its k-th nearest other trip.

    Trips in a set of n <= k get the +inf sentinel.
    """
    values = matrix.values if hasattr(matrix, "values") else np.asarray(matrix)
    n = values.shape[0]
    if n <= k:
        return np.full(n, ISOLATED_SCORE)
    others = values[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    return np.partition(others, k - 1, axis=1)[:, k - 1]


def outlier_score(matrix, params, trip_index):
    """k-distance score of one trip (higher = more anomalous)."""
    return float(outlier_scores(matrix, params.k)[trip_index])


@dataclass
class DetectionResult:
    scored: list
    n_sentinel: int = 0
    n_groups: int = 0
    n_pairs: int = 0
    seconds_per_kpair: float = 0.0


def detect(corpus, test_ids, privacy_cfg, params, cell_side=DEFAULT_CELL_SIDE_M,
           max_pairs_budget=DEFAULT_PAIR_BUDGET, jobs=1, cache=None):
    """Score every test trip; train and test trips of an O-D group form its candidate set.

    Ground-truth labels are stripped before perturbation and scoring and only
    reattached to the emitted ScoredTrip rows.
    """
    from ..evaluation import ScoredTrip

    params.validate()
    truth = corpus.labels()
    visible, _ = perturb_corpus(corpus.without_labels(), privacy_cfg, jobs=jobs)
    groups = group_by_od(visible, cell_side)
    test_set = set(test_ids)
    scored_groups = [(key, ids) for key, ids in groups.items() if test_set.intersection(ids)]
    required = sum(len(ids) * (len(ids) - 1) // 2 for _, ids in scored_groups)
    check_pair_budget(required, max_pairs_budget)

    scored, n_sentinel, timings = [], 0, []
    for key, ids in sorted(scored_groups, key=lambda g: (g[0].origin_cell, g[0].dest_cell)):
        trips = [visible.get(i) for i in ids]
        if len(ids) > params.k:
            matrix = None
            if cache is not None:
                matrix = cache.load(trips, visible.projection_origin)
            if matrix is None:
                matrix = pairwise_matrix(trips, None, visible.projection_origin, jobs=jobs)
                if cache is not None:
                    cache.save(trips, visible.projection_origin, matrix)
            timings.append(matrix.seconds_per_kpair)
            scores = outlier_scores(matrix, params.k)
        else:
            scores = np.full(len(ids), ISOLATED_SCORE)
        for trip_id, score in zip(ids, scores):
            if trip_id in test_set:
                if np.isinf(score):
                    n_sentinel += 1
                scored.append(ScoredTrip(trip_id, truth[trip_id], float(score), str(key)))
    if n_sentinel:
        logger.warning("%d test trips sit in O-D groups too small for k=%d; scored +inf",
                       n_sentinel, params.k)
    scored.sort(key=lambda s: s.trip_id)
    per_kpair = float(np.mean(timings)) if timings else 0.0
    return DetectionResult(scored, n_sentinel, len(scored_groups), required, per_kpair)


def calibrate_min_pts(corpus, calib_test_ids, privacy_cfg, params, candidates=MIN_PTS_CANDIDATES,
                      cell_side=DEFAULT_CELL_SIDE_M, max_pairs_budget=DEFAULT_PAIR_BUDGET, jobs=1):
    """Pick min_pts maximizing AUC on a labeled calibration corpus (ties: smaller min_pts)."""
    from ..evaluation import roc

    best, best_auc = None, -1.0
    for min_pts in candidates:
        trial = DbscanParams(params.eps, min_pts, None)
        result = detect(corpus, calib_test_ids, privacy_cfg, trial, cell_side, max_pairs_budget, jobs)
        labels = {s.truth for s in result.scored}
        if Label.NORMAL not in labels or Label.MALICIOUS not in labels:
            continue
        auc = roc(result.scored).auc
        logger.debug("Calibration min_pts=%d auc=%.4f", min_pts, auc)
        if auc > best_auc:
            best, best_auc = min_pts, auc
    if best is None:
        return params
    logger.info("Calibrated min_pts=%d (auc=%.4f) for %s", best, best_auc, privacy_cfg.label)
    return DbscanParams(params.eps, best, params.score_k)

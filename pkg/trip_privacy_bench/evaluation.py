"""
ROC/AUC computation and the experiment grid.

A grid cell is (detector, privacy setting, attack intent, O-D mode). Every cell
injects attacks into the test split, perturbs what the server would receive, scores
the test trips and reduces the scores to an ROC curve.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import MaliciousIntent, ODMode, inject_attacks
from .config import (CALIBRATION_INTENT, DEFAULT_ATTACK_FRACTION, DEFAULT_CELL_SIDE_M,
                     DEFAULT_EPSILONS, DEFAULT_INTENTS, DEFAULT_PAIR_BUDGET,
                     DEFAULT_TEST_FRACTION, DEFAULT_TEST_PER_GROUP)
from .detectors import dbscan as dbscan_detector
from .detectors import seq_model
from .errors import BenchError
from .privacy import PrivacyConfig, PrivacyMode
from .trajectory import Label, group_by_od, split_test
from .utils import derive_seed

logger = logging.getLogger(__name__)

DETECTORS = ("dbscan", "seq")
STATUS_OK = "ok"
STATUS_NA = "n/a"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class ScoredTrip:
    trip_id: str
    truth: Label
    score: float
    od_key: str = ""


@dataclass
class RocResult:
    points: list
    auc: float
    n_pos: int
    n_neg: int
    thresholds: list = field(default_factory=list)


def roc(scored):
    """ROC curve of scored trips; Malicious is the positive class.

    Thresholds sweep the distinct scores in descending order so tied trips
    enter the curve together. AUC is the trapezoidal area under the points.
    """
    scored = [s for s in scored if s.truth in (Label.NORMAL, Label.MALICIOUS)]
    scores = np.array([s.score for s in scored], dtype=float)
    positive = np.array([s.truth is Label.MALICIOUS for s in scored], dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"ROC needs both classes, got {n_pos} malicious and {n_neg} normal trips")
    if np.any(np.isnan(scores)):
        raise ValueError("ROC scores must not be NaN")

    order = np.argsort(-scores, kind="stable")
    scores, positive = scores[order], positive[order]
    ends = np.append(np.flatnonzero(scores[1:] != scores[:-1]), len(scores) - 1)
    tp = np.cumsum(positive)[ends]
    fp = np.cumsum(~positive)[ends]
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    points = [(float(x), float(y)) for x, y in zip(fpr, tpr)]
    return RocResult(points, auc, n_pos, n_neg, [float(v) for v in scores[ends]])


@dataclass(frozen=True)
class PrivacySetting:
    mode: PrivacyMode = PrivacyMode.NONE
    epsilon: float = None

    def __post_init__(self):
        object.__setattr__(self, "mode", PrivacyMode(self.mode))

    def config(self, seed, test_fraction=DEFAULT_TEST_FRACTION):
        return PrivacyConfig(self.mode, self.epsilon or 0.0, None, test_fraction,
                             derive_seed(seed, "privacy", self.mode.value, self.epsilon))

    @property
    def label(self):
        return "none" if self.mode is PrivacyMode.NONE else f"{self.mode.value}(eps={self.epsilon:g})"

    @property
    def sort_key(self):
        order = [PrivacyMode.NONE, PrivacyMode.LOCATION, PrivacyMode.TRAJECTORY].index(self.mode)
        return (order, -(self.epsilon or 0.0))


def default_privacy_settings(epsilons=DEFAULT_EPSILONS):
    settings = [PrivacySetting()]
    settings += [PrivacySetting(PrivacyMode.LOCATION, e) for e in epsilons]
    settings += [PrivacySetting(PrivacyMode.TRAJECTORY, e) for e in epsilons]
    return tuple(settings)


@dataclass(frozen=True)
class GridCell:
    detector: str
    privacy: PrivacySetting
    c: float
    q: float
    od_mode: ODMode

    @property
    def intent(self):
        return MaliciousIntent(self.c, self.q, self.od_mode)

    @property
    def sort_key(self):
        return (DETECTORS.index(self.detector), self.privacy.sort_key, self.c, self.q,
                self.od_mode.value)


@dataclass
class CellResult:
    cell: GridCell
    status: str
    auc: float = None
    n_pos: int = 0
    n_neg: int = 0
    n_manifest: int = 0
    min_pts: int = None
    runtime_s: float = 0.0
    seconds_per_kpair: float = None
    message: str = ""
    roc: RocResult = None


@dataclass
class ExperimentGrid:
    privacy: tuple = field(default_factory=default_privacy_settings)
    intents: tuple = DEFAULT_INTENTS
    od_modes: tuple = (ODMode.SAME, ODMode.SHIFTED)
    detectors: tuple = DETECTORS
    seed: int = 0
    attack_fraction: float = DEFAULT_ATTACK_FRACTION
    test_per_group: int = DEFAULT_TEST_PER_GROUP
    cell_side: float = DEFAULT_CELL_SIDE_M
    max_pairs_budget: int = DEFAULT_PAIR_BUDGET
    test_fraction: float = DEFAULT_TEST_FRACTION
    dbscan: dbscan_detector.DbscanParams = field(default_factory=dbscan_detector.DbscanParams)
    calibrate_min_pts: bool = True
    calibration_intent: tuple = CALIBRATION_INTENT
    seq: seq_model.SeqModelConfig = field(default_factory=seq_model.SeqModelConfig)
    jobs: int = 1
    cache: object = None

    def cells(self):
        cells = [GridCell(d, p, float(c), float(q), ODMode(od))
                 for d in self.detectors for p in self.privacy
                 for c, q in self.intents for od in self.od_modes]
        return sorted(cells, key=lambda cell: cell.sort_key)


def _calibration_slice(corpus, train_ids, grid):
    """Labeled calibration corpus carved out of the train split."""
    train_corpus = corpus.subset(train_ids)
    _, calib_test = split_test(group_by_od(train_corpus, grid.cell_side), grid.test_per_group,
                               derive_seed(grid.seed, "calibration"))
    c, q = grid.calibration_intent
    injection = inject_attacks(train_corpus, calib_test, MaliciousIntent(c, q),
                               grid.attack_fraction, derive_seed(grid.seed, "calibration-attack"))
    return injection.corpus, injection.test_ids


def _prepare_detectors(corpus, train_ids, grid):
    """Per privacy setting: calibrated DBSCAN params and a trained sequence model."""
    prepared = {}
    calib = None
    for setting in grid.privacy:
        cfg = setting.config(grid.seed, grid.test_fraction)
        entry = {"config": cfg, "dbscan": grid.dbscan, "model": None, "error": None}
        if "dbscan" in grid.detectors and setting.mode is not PrivacyMode.TRAJECTORY \
                and grid.calibrate_min_pts:
            try:
                calib = calib or _calibration_slice(corpus, train_ids, grid)
                entry["dbscan"] = dbscan_detector.calibrate_min_pts(
                    calib[0], calib[1], cfg, grid.dbscan, cell_side=grid.cell_side,
                    max_pairs_budget=grid.max_pairs_budget, jobs=grid.jobs)
            except (BenchError, ValueError) as e:
                logger.warning("min_pts calibration skipped for %s: %s", setting.label, e)
        if "seq" in grid.detectors:
            try:
                entry["model"], _ = seq_model.fit_seq_detector(corpus, train_ids, cfg, grid.seq,
                                                               jobs=grid.jobs)
            except (BenchError, ValueError) as e:
                logger.error("Sequence model training failed for %s: %s", setting.label, e)
                entry["error"] = str(e)
        prepared[setting] = entry
    return prepared


def run_cell(cell, injection, prepared, grid):
    """Score one grid cell; failures become a failed CellResult."""
    if cell.detector == "dbscan" and cell.privacy.mode is PrivacyMode.TRAJECTORY:
        return CellResult(cell, STATUS_NA, message="dbscan only supports offline detection")
    started = time.perf_counter()
    entry = prepared[cell.privacy]
    result = CellResult(cell, STATUS_FAILED, n_manifest=len(injection.manifest))
    try:
        if cell.detector == "dbscan":
            params = entry["dbscan"]
            result.min_pts = params.min_pts
            detection = dbscan_detector.detect(injection.corpus, injection.test_ids, entry["config"],
                                               params, grid.cell_side, grid.max_pairs_budget,
                                               jobs=1, cache=grid.cache)
            scored = detection.scored
            result.seconds_per_kpair = detection.seconds_per_kpair
        else:
            if entry["model"] is None:
                raise BenchError(f"no trained model: {entry['error']}")
            scored = seq_model.detect(injection.corpus, injection.test_ids, entry["config"],
                                      entry["model"])
        n_malicious = sum(1 for s in scored if s.truth is Label.MALICIOUS)
        if n_malicious != len(injection.manifest):
            raise BenchError(f"{n_malicious} malicious trips scored but "
                             f"{len(injection.manifest)} injected")
        curve = roc(scored)
        result.status, result.auc, result.roc = STATUS_OK, curve.auc, curve
        result.n_pos, result.n_neg = curve.n_pos, curve.n_neg
    except (BenchError, ValueError) as e:
        logger.warning("Cell %s failed: %s", cell, e)
        result.message = str(e)
    result.runtime_s = time.perf_counter() - started
    return result


def run_grid(grid, corpus):
    """Run every cell of grid on corpus; returns CellResults sorted by cell."""
    groups = group_by_od(corpus, grid.cell_side)
    train_ids, test_ids = split_test(groups, grid.test_per_group, grid.seed)
    logger.info("Experiment on %d trips: %d train, %d test, %d O-D groups",
                len(corpus), len(train_ids), len(test_ids), len(groups))

    injections = {}
    for c, q in grid.intents:
        for od in grid.od_modes:
            intent = MaliciousIntent(float(c), float(q), ODMode(od))
            seed = derive_seed(grid.seed, "attack", intent.c, intent.q, intent.od_mode.value)
            injections[(intent.c, intent.q, intent.od_mode)] = inject_attacks(
                corpus, test_ids, intent, grid.attack_fraction, seed)

    prepared = _prepare_detectors(corpus, train_ids, grid)
    cells = grid.cells()

    def run(cell):
        return run_cell(cell, injections[(cell.c, cell.q, cell.od_mode)], prepared, grid)

    if grid.jobs > 1:
        with ThreadPoolExecutor(max_workers=grid.jobs) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(cell) for cell in cells]
    results.sort(key=lambda r: r.cell.sort_key)
    n_ok = sum(1 for r in results if r.status == STATUS_OK)
    logger.info("Grid finished: %d of %d cells ok", n_ok, len(results))
    return results


@dataclass(frozen=True)
class OdSensitivityRow:
    detector: str
    privacy: str
    c: float
    q: float
    auc_same: float
    auc_shifted: float

    @property
    def gap(self):
        return self.auc_shifted - self.auc_same


def od_sensitivity(results):
    """auc_shifted - auc_same per (detector, privacy, intent) with both modes scored."""
    by_key = {}
    for r in results:
        if r.status != STATUS_OK:
            continue
        key = (r.cell.detector, r.cell.privacy, r.cell.c, r.cell.q)
        by_key.setdefault(key, {})[r.cell.od_mode] = r.auc
    rows = []
    for (detector, privacy, c, q), aucs in by_key.items():
        if ODMode.SAME in aucs and ODMode.SHIFTED in aucs:
            rows.append(((DETECTORS.index(detector), privacy.sort_key, c, q),
                         OdSensitivityRow(detector, privacy.label, c, q,
                                          aucs[ODMode.SAME], aucs[ODMode.SHIFTED])))
    if not rows:
        raise ValueError("O-D sensitivity needs both O-D modes scored for some cell")
    return [row for _, row in sorted(rows, key=lambda item: item[0])]


def relative_drop(baseline_auc, auc):
    """Relative AUC loss (baseline - auc) / baseline."""
    if not baseline_auc:
        raise ValueError("baseline AUC must be positive")
    return (baseline_auc - auc) / baseline_auc

import dataclasses

import numpy as np
import pytest
from scipy import stats

from trip_privacy_bench.attack import ODMode
from trip_privacy_bench.database import ResultsDatabase, result_from_row
from trip_privacy_bench.detectors.dbscan import DbscanParams
from trip_privacy_bench.detectors.seq_model import SeqModelConfig
from trip_privacy_bench.evaluation import (STATUS_FAILED, STATUS_NA, STATUS_OK, CellResult,
                                           ExperimentGrid, GridCell, PrivacySetting, ScoredTrip,
                                           default_privacy_settings, od_sensitivity,
                                           relative_drop, roc, run_grid)
from trip_privacy_bench.privacy import PrivacyMode
from trip_privacy_bench.trajectory import Label

N, M = Label.NORMAL, Label.MALICIOUS


def scored(pairs):
    return [ScoredTrip(f"t{i}", truth, score) for i, (truth, score) in enumerate(pairs)]


def test_perfect_separation():
    result = roc(scored([(N, 1.0), (N, 2.0), (M, 3.0), (M, 4.0)]))
    assert result.auc == 1.0
    assert result.points[0] == (0.0, 0.0)
    assert result.points[-1] == (1.0, 1.0)
    assert (result.n_pos, result.n_neg) == (2, 2)


def test_inverted_ranking():
    assert roc(scored([(M, 1.0), (N, 2.0)])).auc == 0.0


def test_all_tied_scores_give_half():
    result = roc(scored([(N, 5.0), (M, 5.0), (N, 5.0), (M, 5.0)]))
    assert result.auc == 0.5
    assert result.points == [(0.0, 0.0), (1.0, 1.0)]


def test_infinite_scores_tie_together():
    result = roc(scored([(N, np.inf), (M, np.inf), (N, 1.0), (M, 2.0)]))
    assert result.thresholds[0] == np.inf
    assert result.points == [(0.0, 0.0), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
    assert result.auc == pytest.approx(0.625)


def test_roc_matches_mann_whitney():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n_pos, n_neg = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        pos = rng.integers(0, 8, size=n_pos).astype(float)
        neg = rng.integers(0, 8, size=n_neg).astype(float)
        trips = scored([(M, s) for s in pos] + [(N, s) for s in neg])
        u = stats.mannwhitneyu(pos, neg, alternative="two-sided").statistic
        assert roc(trips).auc == pytest.approx(u / (n_pos * n_neg), abs=1e-12)


def test_roc_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    truth = [M if rng.random() < 0.3 else N for _ in range(60)]
    truth[0], truth[1] = M, N
    values = rng.exponential(size=60)
    a = roc(scored(zip(truth, values)))
    b = roc(scored(zip(truth, np.log(values) * 3.0 + 7.0)))
    assert a.auc == pytest.approx(b.auc, abs=1e-12)
    assert a.points == b.points


def test_roc_rejects_single_class_and_nan():
    with pytest.raises(ValueError):
        roc(scored([(N, 1.0), (N, 2.0)]))
    with pytest.raises(ValueError):
        roc(scored([(N, 1.0), (M, float("nan"))]))


def test_roc_ignores_unknown_labels():
    result = roc(scored([(N, 1.0), (M, 2.0), (Label.UNKNOWN, 9.0)]))
    assert (result.n_pos, result.n_neg) == (1, 1)


def test_relative_drop():
    assert relative_drop(0.9, 0.45) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        relative_drop(0.0, 0.5)


def test_default_privacy_settings_order():
    settings = default_privacy_settings()
    assert [s.label for s in settings] == [
        "none", "location(eps=0.1)", "location(eps=0.01)",
        "trajectory(eps=0.1)", "trajectory(eps=0.01)"]
    assert sorted(settings, key=lambda s: s.sort_key) == list(settings)


def cell_result(detector, od, auc, c=300.0, q=0.5, status=STATUS_OK):
    cell = GridCell(detector, PrivacySetting(), c, q, od)
    return CellResult(cell, status, auc)


def test_od_sensitivity_pairs_modes():
    rows = od_sensitivity([
        cell_result("seq", ODMode.SAME, 0.7),
        cell_result("seq", ODMode.SHIFTED, 0.95),
        cell_result("dbscan", ODMode.SAME, 0.8),
        cell_result("dbscan", ODMode.SHIFTED, 0.9),
        cell_result("dbscan", ODMode.SAME, 0.6, c=700.0, q=1.0),
    ])
    assert [(r.detector, r.c) for r in rows] == [("dbscan", 300.0), ("seq", 300.0)]
    assert rows[1].gap == pytest.approx(0.25)


def test_od_sensitivity_needs_both_modes():
    with pytest.raises(ValueError):
        od_sensitivity([cell_result("seq", ODMode.SAME, 0.7),
                        cell_result("seq", ODMode.SHIFTED, None, status=STATUS_FAILED)])


@pytest.fixture(scope="module")
def small_grid():
    return ExperimentGrid(
        privacy=(PrivacySetting(), PrivacySetting(PrivacyMode.TRAJECTORY, 0.1)),
        intents=((700.0, 1.0),),
        od_modes=(ODMode.SAME,),
        seed=4,
        dbscan=DbscanParams(min_pts=5),
        calibrate_min_pts=False,
        seq=SeqModelConfig(hidden_dim=4, latent_dim=2, max_len=8, epochs=1, seed=1),
    )


@pytest.fixture(scope="module")
def grid_results(small_grid, small_corpus):
    return run_grid(small_grid, small_corpus)


def test_grid_statuses(grid_results):
    status = {(r.cell.detector, r.cell.privacy.mode): r.status for r in grid_results}
    assert status == {
        ("dbscan", PrivacyMode.NONE): STATUS_OK,
        ("dbscan", PrivacyMode.TRAJECTORY): STATUS_NA,
        ("seq", PrivacyMode.NONE): STATUS_OK,
        ("seq", PrivacyMode.TRAJECTORY): STATUS_OK,
    }
    for r in grid_results:
        if r.status == STATUS_OK:
            assert r.n_pos == r.n_manifest == 15
            assert r.n_neg == 30
            assert 0.0 <= r.auc <= 1.0
    dbscan_none = grid_results[0]
    assert dbscan_none.cell.detector == "dbscan" and dbscan_none.min_pts == 5
    assert dbscan_none.auc >= 0.9


def test_grid_is_deterministic_across_jobs(small_grid, small_corpus, grid_results):
    again = run_grid(dataclasses.replace(small_grid, jobs=2), small_corpus)
    assert [(r.cell, r.status, r.auc) for r in again] == \
        [(r.cell, r.status, r.auc) for r in grid_results]


def test_grid_records_budget_failures(small_grid, small_corpus):
    grid = dataclasses.replace(small_grid, max_pairs_budget=1, detectors=("dbscan",),
                               privacy=(PrivacySetting(),))
    (result,) = run_grid(grid, small_corpus)
    assert result.status == STATUS_FAILED
    assert "budget" in result.message


def test_results_database_round_trip(tmp_path, grid_results):
    db = ResultsDatabase(str(tmp_path))
    ok, message = db.save_results(grid_results)
    assert ok, message
    rows, _ = db.load_results()
    assert len(rows) == len(grid_results)
    for row, original in zip(rows, grid_results):
        restored = result_from_row(row)
        assert restored.cell == original.cell
        assert restored.status == original.status
        assert restored.auc == original.auc
        if original.roc is not None:
            assert db.load_roc_points(row) == original.roc.points
    assert (tmp_path / "timings.csv").exists()


def test_results_database_missing_file(tmp_path):
    rows, message = ResultsDatabase(str(tmp_path)).load_results()
    assert rows == []
    assert "No results" in message

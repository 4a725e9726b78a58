"""
Desk-scale reproduction checks on the pinned synthetic corpus.

These take minutes; run them with `pytest -m slow`.
"""

import time

import pytest

from trip_privacy_bench.attack import MaliciousIntent, ODMode, inject_attacks
from trip_privacy_bench.detectors import seq_model
from trip_privacy_bench.detectors.dbscan import DbscanParams, detect
from trip_privacy_bench.evaluation import relative_drop, roc
from trip_privacy_bench.privacy import PrivacyConfig, PrivacyMode
from trip_privacy_bench.synth import SynthParams, synth_corpus
from trip_privacy_bench.trajectory import group_by_od, split_test

pytestmark = pytest.mark.slow

SEED = 7
NO_PRIVACY = PrivacyConfig(PrivacyMode.NONE)
LOCATION_001 = PrivacyConfig(PrivacyMode.LOCATION, 0.01, seed=SEED)
TRAJECTORY_001 = PrivacyConfig(PrivacyMode.TRAJECTORY, 0.01, seed=SEED)


@pytest.fixture(scope="module")
def pinned_corpus():
    corpus = synth_corpus(SynthParams(n_trips=2000, n_od_pairs=50, seed=SEED))
    assert len(group_by_od(corpus)) >= 50
    return corpus


@pytest.fixture(scope="module")
def pinned_split(pinned_corpus):
    return split_test(group_by_od(pinned_corpus), 5, SEED)


@pytest.fixture(scope="module")
def seq_models(pinned_corpus, pinned_split):
    """Default-config sequence models, fitted once per privacy setting."""
    train_ids, _ = pinned_split
    models = {}

    def fitted(privacy):
        if privacy.label not in models:
            models[privacy.label], _ = seq_model.fit_seq_detector(
                pinned_corpus, train_ids, privacy, seq_model.SeqModelConfig())
        return models[privacy.label]

    return fitted


def injected(corpus, test_ids, c, q, od_mode=ODMode.SAME):
    return inject_attacks(corpus, test_ids, MaliciousIntent(c, q, od_mode), 0.5, SEED)


def dbscan_auc(injection, privacy):
    result = detect(injection.corpus, injection.test_ids, privacy, DbscanParams(min_pts=5))
    return roc(result.scored).auc


def seq_auc(injection, privacy, seq_models):
    scored = seq_model.detect(injection.corpus, injection.test_ids, privacy, seq_models(privacy))
    return roc(scored).auc


def test_detectors_agree_without_privacy(pinned_corpus, pinned_split, seq_models):
    _, test_ids = pinned_split
    injection = injected(pinned_corpus, test_ids, 700.0, 1.0)
    dbscan_auc_none = dbscan_auc(injection, NO_PRIVACY)
    seq_auc_none = seq_auc(injection, NO_PRIVACY, seq_models)
    assert dbscan_auc_none >= 0.9
    assert seq_auc_none >= 0.9
    assert abs(dbscan_auc_none - seq_auc_none) <= 0.05


def test_dbscan_degrades_with_privacy(pinned_corpus, pinned_split):
    # displacement on the scale of the eps=0.1 noise
    _, test_ids = pinned_split
    injection = injected(pinned_corpus, test_ids, 100.0, 0.5)
    params = DbscanParams(min_pts=5)
    aucs = []
    for cfg in (NO_PRIVACY, PrivacyConfig(PrivacyMode.LOCATION, 0.1, seed=SEED),
                PrivacyConfig(PrivacyMode.LOCATION, 0.01, seed=SEED)):
        aucs.append(roc(detect(injection.corpus, injection.test_ids, cfg, params).scored).auc)
    assert aucs[0] - aucs[1] >= 0.03
    assert aucs[1] - aucs[2] >= 0.03


def test_dbscan_cost_grows_quadratically():
    timings, pairs = [], []
    for n_trips in (250, 500, 1000):
        corpus = synth_corpus(SynthParams(n_trips=n_trips, n_od_pairs=2, seed=SEED))
        best = None
        for _ in range(2):
            started = time.perf_counter()
            result = detect(corpus, corpus.ids, NO_PRIVACY, DbscanParams())
            elapsed = time.perf_counter() - started
            best = elapsed if best is None else min(best, elapsed)
        timings.append(best)
        pairs.append(result.n_pairs)
    assert pairs[1] >= 3.5 * pairs[0]
    assert pairs[2] >= 3.5 * pairs[1]
    assert timings[2] >= 3.5 * timings[1]


def test_dbscan_loses_more_auc_than_sequence_model(pinned_corpus, pinned_split, seq_models):
    _, test_ids = pinned_split
    injection = injected(pinned_corpus, test_ids, 700.0, 1.0)
    dbscan_drop = relative_drop(dbscan_auc(injection, NO_PRIVACY),
                                dbscan_auc(injection, LOCATION_001))
    seq_drop = relative_drop(seq_auc(injection, NO_PRIVACY, seq_models),
                             seq_auc(injection, LOCATION_001, seq_models))
    assert dbscan_drop > seq_drop


def test_trajectory_noise_no_worse_than_location_noise(pinned_corpus, pinned_split, seq_models):
    _, test_ids = pinned_split
    injection = injected(pinned_corpus, test_ids, 700.0, 1.0)
    location = seq_auc(injection, LOCATION_001, seq_models)
    trajectory = seq_auc(injection, TRAJECTORY_001, seq_models)
    assert trajectory >= location - 0.01


def test_shifted_endpoints_are_easier_to_catch(pinned_corpus, pinned_split, seq_models):
    _, test_ids = pinned_split
    same = injected(pinned_corpus, test_ids, 300.0, 0.5)
    shifted = injected(pinned_corpus, test_ids, 300.0, 0.5, ODMode.SHIFTED)
    assert dbscan_auc(shifted, NO_PRIVACY) >= dbscan_auc(same, NO_PRIVACY)
    for privacy in (LOCATION_001, TRAJECTORY_001):
        assert seq_auc(shifted, privacy, seq_models) >= seq_auc(same, privacy, seq_models)

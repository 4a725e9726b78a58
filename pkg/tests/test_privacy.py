import math

import numpy as np
import pytest
from scipy import special, stats

from conftest import PORTO_CENTER, straight_trip
from trip_privacy_bench.errors import ConfigError
from trip_privacy_bench.privacy import (PrivacyConfig, PrivacyMode, geo_indistinguishability_check,
                                        lambertw_m1, perturb, perturb_corpus,
                                        perturb_location_based, perturb_trajectory_based,
                                        planar_laplace_noise, planar_laplace_sample, sample_radius)
from trip_privacy_bench.trajectory import PlanarPoint, project_array


def radius_cdf(epsilon):
    return lambda r: 1.0 - (1.0 + epsilon * r) * np.exp(-epsilon * r)


def test_lambertw_matches_scipy():
    z = np.concatenate([np.linspace(-1.0 / math.e + 1e-6, -0.01, 300),
                        -np.geomspace(1e-2, 1e-12, 50)])
    expected = special.lambertw(z, -1).real
    assert np.allclose(lambertw_m1(z), expected, rtol=1e-10, atol=0.0)


def test_lambertw_branch_point_and_scalar():
    assert lambertw_m1(-1.0 / math.e) == pytest.approx(-1.0, abs=1e-6)
    w = lambertw_m1(-0.2)
    assert isinstance(w, float)
    assert w * math.exp(w) == pytest.approx(-0.2, rel=1e-12)


def test_lambertw_rejects_outside_domain():
    with pytest.raises(ValueError):
        lambertw_m1(0.1)
    with pytest.raises(ValueError):
        lambertw_m1(-0.5)


@pytest.mark.parametrize("epsilon", [0.1, 0.01])
def test_radius_distribution(epsilon):
    rng = np.random.default_rng(1)
    r = sample_radius(epsilon, 200_000, rng)
    assert np.all(r >= 0)
    assert r.mean() == pytest.approx(2.0 / epsilon, rel=0.01)
    assert stats.kstest(r, radius_cdf(epsilon)).pvalue > 0.001


def test_sample_radius_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        sample_radius(0.0, 10, np.random.default_rng(0))


def test_planar_laplace_sample_moves_point():
    rng = np.random.default_rng(3)
    p = planar_laplace_sample(PlanarPoint(10.0, 20.0), 0.1, rng)
    assert isinstance(p, PlanarPoint)
    assert (p.x, p.y) != (10.0, 20.0)


@pytest.mark.slow
@pytest.mark.parametrize("epsilon", [0.1, 0.01])
def test_mechanism_statistics_at_full_scale(epsilon):
    rng = np.random.default_rng(2)
    noise = planar_laplace_noise(1_000_000, epsilon, rng)
    r = np.hypot(noise[:, 0], noise[:, 1])
    assert r.mean() == pytest.approx(2.0 / epsilon, rel=0.01)
    assert stats.kstest(r, radius_cdf(epsilon)).pvalue > 0.001
    if epsilon == 0.01:
        assert np.hypot(*noise.mean(axis=0)) < 1.0


def test_geo_indistinguishability_audit():
    result = geo_indistinguishability_check(0.01, 200_000, grid=100.0, distance=100.0, seed=4,
                                            min_hits=2000)
    assert result.n_bins > 0
    assert result.bound == pytest.approx(1.0)
    assert result.max_violation <= 0.15


@pytest.mark.slow
def test_geo_indistinguishability_audit_full_scale():
    result = geo_indistinguishability_check(0.01, 1_000_000, grid=50.0, distance=100.0, seed=5,
                                            min_hits=500)
    assert result.n_bins > 10
    assert result.max_violation <= 0.15


def test_privacy_config_validation():
    with pytest.raises(ConfigError):
        PrivacyConfig(PrivacyMode.LOCATION, 0.0).validate()
    with pytest.raises(ConfigError):
        PrivacyConfig(PrivacyMode.TRAJECTORY, 0.1, test_fraction=1.0).validate()
    assert PrivacyConfig(PrivacyMode.TRAJECTORY, 0.05).threshold == pytest.approx(40.0)
    assert PrivacyConfig(PrivacyMode.TRAJECTORY, 0.05, threshold_l=7.0).threshold == 7.0
    assert PrivacyConfig("location", 0.1).label == "location(eps=0.1)"


def test_mode_none_is_identity(line_corpus):
    cfg = PrivacyConfig(PrivacyMode.NONE)
    out, reports = perturb_corpus(line_corpus, cfg)
    assert all(a.same_points(b) for a, b in zip(line_corpus, out))
    assert all(r.n_predicted == 0 for r in reports)


def test_location_based_is_deterministic_per_trip():
    t = straight_trip()
    cfg = PrivacyConfig(PrivacyMode.LOCATION, 0.1, seed=7)
    a, report = perturb_location_based(t, cfg, PORTO_CENTER)
    b, _ = perturb_location_based(t, cfg, PORTO_CENTER)
    c, _ = perturb_location_based(t, PrivacyConfig(PrivacyMode.LOCATION, 0.1, seed=8), PORTO_CENTER)
    assert a.same_points(b)
    assert not a.same_points(c)
    assert len(a) == len(t) and a.id == t.id and a.label is t.label
    assert report.epsilon_spent_per_point == [0.1] * len(t)


def test_location_based_noise_scale():
    t = straight_trip(n=400, step=10.0)
    out, _ = perturb_location_based(t, PrivacyConfig(PrivacyMode.LOCATION, 0.01, seed=1), PORTO_CENTER)
    shift = project_array(out.coords, PORTO_CENTER) - project_array(t.coords, PORTO_CENTER)
    assert np.hypot(shift[:, 0], shift[:, 1]).mean() == pytest.approx(200.0, rel=0.15)


def test_trajectory_based_budget_accounting():
    t = straight_trip(n=50, step=20.0)
    cfg = PrivacyConfig(PrivacyMode.TRAJECTORY, 0.1, test_fraction=0.1, seed=3)
    out, report = perturb_trajectory_based(t, cfg, PORTO_CENTER)
    eps_test, eps_noise = 0.01, 0.09
    assert report.epsilon_spent_per_point[0] == pytest.approx(eps_noise)
    assert len(report.epsilon_spent_per_point) == len(t)
    predicted = [e for e in report.epsilon_spent_per_point[1:] if e == pytest.approx(eps_test)]
    fresh = [e for e in report.epsilon_spent_per_point[1:] if e == pytest.approx(eps_test + eps_noise)]
    assert len(predicted) == report.n_predicted
    assert len(predicted) + len(fresh) == len(t) - 1
    assert all(e <= cfg.epsilon + 1e-12 for e in report.epsilon_spent_per_point)


def test_trajectory_based_large_threshold_repeats_first_report():
    t = straight_trip(n=10)
    cfg = PrivacyConfig(PrivacyMode.TRAJECTORY, 0.1, threshold_l=1e9, seed=3)
    out, report = perturb_trajectory_based(t, cfg, PORTO_CENTER)
    assert report.n_predicted == len(t) - 1
    assert np.all(out.coords == out.coords[0])


def test_perturb_dispatches_on_mode():
    t = straight_trip()
    cfg = PrivacyConfig(PrivacyMode.TRAJECTORY, 0.1, threshold_l=1e9, seed=3)
    _, report = perturb(t, cfg, PORTO_CENTER)
    assert report.mode is PrivacyMode.TRAJECTORY


def test_perturb_corpus_independent_of_jobs(small_corpus):
    cfg = PrivacyConfig(PrivacyMode.LOCATION, 0.05, seed=11)
    a, _ = perturb_corpus(small_corpus, cfg, jobs=1)
    b, _ = perturb_corpus(small_corpus, cfg, jobs=4)
    assert all(x.same_points(y) for x, y in zip(a, b))
    assert a.labels() == small_corpus.labels()


def test_stationary_trip_is_mostly_predicted():
    t = straight_trip(n=200, step=0.0)
    eps_test = 0.1 * 0.1
    cfg = PrivacyConfig(PrivacyMode.TRAJECTORY, 0.1, threshold_l=3.0 / eps_test + 1.0,
                        test_fraction=0.1, seed=6)
    _, report = perturb_trajectory_based(t, cfg, PORTO_CENTER)
    assert report.n_predicted >= 0.8 * (len(t) - 1)


def test_zero_threshold_on_fast_trip_never_predicts():
    t = straight_trip(n=30, step=2000.0)
    cfg = PrivacyConfig(PrivacyMode.TRAJECTORY, 0.1, threshold_l=0.0, seed=6)
    _, report = perturb_trajectory_based(t, cfg, PORTO_CENTER)
    assert report.n_predicted == 0
    assert report.epsilon_spent_per_point[1:] == [pytest.approx(0.1)] * (len(t) - 1)

"""
Geo-indistinguishable perturbation of trajectories.

Two mechanisms are provided:

* location-based: every point independently receives planar Laplace noise;
* trajectory-based: a predictive mechanism that reports the previous noisy point
  whenever a noisy distance test says the true point is still close to it,
  spending only the test share of the budget on that point.

epsilon is per point in 1/meter, so the mean displacement of the planar Laplace
mechanism is 2/epsilon.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import DEFAULT_TEST_FRACTION, EPSILON_UNIT_NOTE
from .errors import ConfigError
from .trajectory import PlanarPoint, project_array, unproject_array
from .utils import derive_rng

logger = logging.getLogger(__name__)

_INV_E = math.exp(-1.0)


class PrivacyMode(str, Enum):
    NONE = "none"
    LOCATION = "location"
    TRAJECTORY = "trajectory"


@dataclass(frozen=True)
class PrivacyConfig:
    """Mechanism selection and parameters.

    threshold_l defaults to 2/epsilon when left as None.
    """

    mode: PrivacyMode = PrivacyMode.NONE
    epsilon: float = 0.0
    threshold_l: float = None
    test_fraction: float = DEFAULT_TEST_FRACTION
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", PrivacyMode(self.mode))

    def validate(self):
        if self.mode is not PrivacyMode.NONE and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0 for privacy mode {self.mode.value}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.threshold_l is not None and self.threshold_l < 0:
            raise ConfigError("threshold_l must be >= 0")
        return self

    @property
    def threshold(self):
        if self.threshold_l is not None:
            return self.threshold_l
        return 2.0 / self.epsilon

    @property
    def label(self):
        if self.mode is PrivacyMode.NONE:
            return "none"
        return f"{self.mode.value}(eps={self.epsilon:g})"


@dataclass
class PerturbationReport:
    trip_id: str
    n_points: int
    n_predicted: int = 0
    epsilon_spent_per_point: list = field(default_factory=list)
    mode: PrivacyMode = PrivacyMode.NONE


def lambertw_m1(z, max_iter=100):
    """Lower real branch W_-1 of the Lambert W function on [-1/e, 0).

    Starts from the branch-point series near -1/e or the logarithmic
    asymptote near 0 and refines with Newton steps. Accurate to about 1e-12
    relative away from the immediate branch point.
    """
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z).copy()
    if np.any((z < -_INV_E - 1e-15) | (z >= 0.0)):
        raise ValueError("lambertw_m1 is real only on [-1/e, 0)")
    z = np.maximum(z, -_INV_E)

    w = np.empty_like(z)
    near = z < -0.25
    p = -np.sqrt(np.maximum(2.0 * (1.0 + math.e * z[near]), 0.0))
    w[near] = -1.0 + p - p ** 2 / 3.0 + 11.0 / 72.0 * p ** 3 - 43.0 / 540.0 * p ** 4
    l1 = np.log(-z[~near])
    l2 = np.log(-l1)
    w[~near] = l1 - l2 + l2 / l1

    branch = (1.0 + math.e * z) < 1e-14
    w[branch] = -1.0
    active = ~branch
    for _ in range(max_iter):
        if not np.any(active):
            break
        wa = w[active]
        # Newton on f(w) = w - z*exp(-w); avoids exp(w) underflow for w << -1
        f = wa - z[active] * np.exp(-wa)
        step = f / (1.0 + z[active] * np.exp(-wa))
        new = wa - step
        new = np.where(new >= -1.0, (wa - 1.0) / 2.0, new)
        w[active] = new
        done = np.abs(new - wa) <= 1e-15 * np.abs(new)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return float(w[0]) if scalar else w


def sample_radius(epsilon, size, rng):
    """Radii with density eps^2 r exp(-eps r) by inverse-CDF sampling."""
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    p = rng.random(size)
    return -(lambertw_m1((p - 1.0) / math.e) + 1.0) / epsilon


def planar_laplace_noise(n, epsilon, rng):
    """(n, 2) displacement vectors drawn from the planar Laplace distribution."""
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    r = sample_radius(epsilon, n, rng)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def planar_laplace_sample(center, epsilon, rng):
    """One planar Laplace sample around center."""
    dx, dy = planar_laplace_noise(1, epsilon, rng)[0]
    return PlanarPoint(center.x + float(dx), center.y + float(dy))


def _passthrough(t):
    return t, PerturbationReport(t.id, len(t), 0, [], PrivacyMode.NONE)


def perturb_location_based(t, cfg, origin=None):
    """Independent planar Laplace noise on every point."""
    cfg.validate()
    if cfg.mode is PrivacyMode.NONE:
        return _passthrough(t)
    origin = origin or t.origin_point
    rng = derive_rng(cfg.seed, "perturb", t.id)
    xy = project_array(t.coords, origin) + planar_laplace_noise(len(t), cfg.epsilon, rng)
    report = PerturbationReport(t.id, len(t), 0, [cfg.epsilon] * len(t), PrivacyMode.LOCATION)
    return t.with_coords(unproject_array(xy, origin)), report


def perturb_trajectory_based(t, cfg, origin=None):
    """Predictive mechanism: report the last noisy point while a noisy test says it is close."""
    cfg.validate()
    if cfg.mode is PrivacyMode.NONE:
        return _passthrough(t)
    origin = origin or t.origin_point
    rng = derive_rng(cfg.seed, "perturb", t.id)
    eps_test = cfg.test_fraction * cfg.epsilon
    eps_noise = (1.0 - cfg.test_fraction) * cfg.epsilon
    threshold = cfg.threshold

    truth = project_array(t.coords, origin)
    out = np.empty_like(truth)
    spent = []
    n_predicted = 0
    for i, point in enumerate(truth):
        if i > 0:
            prediction = out[i - 1]
            d_noisy = float(np.hypot(*(point - prediction))) + rng.laplace(0.0, 1.0 / eps_test)
            if d_noisy <= threshold:
                out[i] = prediction
                n_predicted += 1
                spent.append(eps_test)
                continue
            out[i] = point + planar_laplace_noise(1, eps_noise, rng)[0]
            spent.append(eps_test + eps_noise)
        else:
            out[i] = point + planar_laplace_noise(1, eps_noise, rng)[0]
            spent.append(eps_noise)
    report = PerturbationReport(t.id, len(t), n_predicted, spent, PrivacyMode.TRAJECTORY)
    return t.with_coords(unproject_array(out, origin)), report


def perturb(t, cfg, origin=None):
    """Dispatch on cfg.mode."""
    if cfg.mode is PrivacyMode.TRAJECTORY:
        return perturb_trajectory_based(t, cfg, origin)
    return perturb_location_based(t, cfg, origin)


def perturb_corpus(corpus, cfg, jobs=1):
    """Perturb every trip of a corpus; labels, bbox and origin are kept.

    Each trip draws from its own stream derived from (seed, trip id), so the
    result does not depend on jobs.
    """
    cfg.validate()
    if cfg.mode is PrivacyMode.NONE:
        reports = [_passthrough(t)[1] for t in corpus]
        return corpus, reports
    logger.info("Perturbing %d trips with %s; %s", len(corpus), cfg.label, EPSILON_UNIT_NOTE)
    origin = corpus.projection_origin

    def run(t):
        return perturb(t, cfg, origin)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, corpus.trajectories))
    else:
        results = [run(t) for t in corpus.trajectories]
    return corpus.replace_trajectories(r[0] for r in results), [r[1] for r in results]


@dataclass
class AuditResult:
    max_violation: float
    bound: float
    n_bins: int


def geo_indistinguishability_check(epsilon, n_samples, grid, distance=100.0, seed=0,
                                   min_hits=500):
    """Empirical audit of the planar Laplace mechanism against the e^(eps d) ratio bound.

    Samples n_samples reports around x = (0, 0) and x' = (distance, 0), bins them on a
    square grid of side `grid` meters and returns the largest
    |log(P(z|x) / P(z|x'))| - eps * d over bins with at least min_hits hits in both.
    """
    rng = derive_rng(seed, "audit", epsilon, distance)
    a = planar_laplace_noise(n_samples, epsilon, rng)
    b = planar_laplace_noise(n_samples, epsilon, rng) + np.array([distance, 0.0])
    lo = np.floor(min(a.min(), b.min()) / grid) * grid
    hi = np.ceil(max(a.max(), b.max()) / grid) * grid + grid
    edges = np.arange(lo, hi + grid / 2.0, grid)
    ha, _, _ = np.histogram2d(a[:, 0], a[:, 1], bins=[edges, edges])
    hb, _, _ = np.histogram2d(b[:, 0], b[:, 1], bins=[edges, edges])
    mask = (ha >= min_hits) & (hb >= min_hits)
    bound = epsilon * distance
    if not np.any(mask):
        return AuditResult(0.0, bound, 0)
    log_ratio = np.abs(np.log(ha[mask] / hb[mask]))
    return AuditResult(float(np.max(log_ratio) - bound), bound, int(mask.sum()))

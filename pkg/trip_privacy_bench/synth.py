"""
Synthetic trip corpus on a Manhattan street grid.

The Porto dataset cannot be redistributed, so every desk-scale experiment runs on
trips generated here: O-D pairs between grid intersections, one or two Manhattan
routes per pair, positions sampled every sample_period_s at constant speed and
blurred with Gaussian jitter.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import PORTO_CENTER, SYNTH_DEFAULTS
from .errors import ConfigError
from .trajectory import BBox, Corpus, GeoPoint, Label, Trajectory, unproject_array
from .utils import derive_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthParams:
    n_trips: int = SYNTH_DEFAULTS["n_trips"]
    n_od_pairs: int = SYNTH_DEFAULTS["n_od_pairs"]
    grid_extent_m: float = SYNTH_DEFAULTS["grid_extent_m"]
    block_m: float = SYNTH_DEFAULTS["block_m"]
    node_offset_m: float = SYNTH_DEFAULTS["node_offset_m"]
    speed_mps: float = SYNTH_DEFAULTS["speed_mps"]
    sample_period_s: float = SYNTH_DEFAULTS["sample_period_s"]
    jitter_m: float = SYNTH_DEFAULTS["jitter_m"]
    min_trip_m: float = SYNTH_DEFAULTS["min_trip_m"]
    routes_per_pair: int = SYNTH_DEFAULTS["routes_per_pair"]
    seed: int = SYNTH_DEFAULTS["seed"]
    center: tuple = field(default=PORTO_CENTER)

    def validate(self):
        for name in ("n_trips", "n_od_pairs", "grid_extent_m", "block_m",
                     "speed_mps", "sample_period_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"synth parameter {name} must be positive")
        if self.jitter_m < 0 or self.node_offset_m < 0 or self.min_trip_m < 0:
            raise ConfigError("jitter_m, node_offset_m and min_trip_m must be non-negative")
        if self.routes_per_pair not in (1, 2):
            raise ConfigError("routes_per_pair must be 1 or 2")
        if self.node_offset_m > self.grid_extent_m:
            raise ConfigError("node_offset_m exceeds grid_extent_m")
        return self

    def to_dict(self):
        d = asdict(self)
        d["center"] = list(self.center)
        return d


def grid_nodes(params):
    """Planar intersection coordinates (centered on the grid)."""
    half = params.grid_extent_m / 2.0
    ticks = np.arange(params.node_offset_m, params.grid_extent_m - params.node_offset_m + 1e-9,
                      params.block_m) - half
    xs, ys = np.meshgrid(ticks, ticks)
    return np.column_stack([xs.ravel(), ys.ravel()])


def sample_od_pairs(nodes, params, rng):
    """Draw distinct ordered node pairs at least min_trip_m apart (Manhattan)."""
    n = len(nodes)
    manhattan = np.abs(nodes[:, None, :] - nodes[None, :, :]).sum(axis=2)
    candidates = np.argwhere(manhattan >= max(params.min_trip_m, 1e-9))
    if len(candidates) < params.n_od_pairs:
        raise ConfigError(
            f"Grid of {n} nodes only offers {len(candidates)} O-D pairs, "
            f"{params.n_od_pairs} requested")
    chosen = rng.choice(len(candidates), size=params.n_od_pairs, replace=False)
    return [tuple(int(v) for v in candidates[i]) for i in chosen]


def manhattan_route(origin, dest, x_first):
    """Corner list of an L-shaped route."""
    corner = np.array([dest[0], origin[1]]) if x_first else np.array([origin[0], dest[1]])
    return np.vstack([origin, corner, dest])


def sample_route(route, step_m):
    """Positions every step_m along a polyline, always ending at its last vertex."""
    seg = np.diff(route, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s = np.arange(0.0, total, step_m)
    if len(s) == 0 or total - s[-1] > 1e-9:
        s = np.append(s, total)
    x = np.interp(s, cum, route[:, 0])
    y = np.interp(s, cum, route[:, 1])
    return np.column_stack([x, y])


def synth_corpus(params=None):
    """Generate a labeled-Normal synthetic corpus, deterministic under params.seed."""
    params = (params or SynthParams()).validate()
    rng = derive_rng(params.seed, "synth")
    nodes = grid_nodes(params)
    pairs = sample_od_pairs(nodes, params, rng)
    # One or two L-shaped variants per pair
    route_sets = []
    for o, d in pairs:
        first = bool(rng.integers(2))
        variants = [manhattan_route(nodes[o], nodes[d], first)]
        if params.routes_per_pair == 2:
            variants.append(manhattan_route(nodes[o], nodes[d], not first))
        route_sets.append([sample_route(r, params.speed_mps * params.sample_period_s)
                           for r in variants])

    half = params.grid_extent_m / 2.0
    origin = GeoPoint(*params.center)
    trajectories = []
    for k in range(params.n_trips):
        routes = route_sets[k % len(route_sets)]
        xy = routes[(k // len(route_sets)) % len(routes)]
        if params.jitter_m > 0:
            xy = xy + rng.normal(0.0, params.jitter_m, size=xy.shape)
        xy = np.clip(xy, -half, half)
        trajectories.append(Trajectory(f"S{k:06d}", unproject_array(xy, origin), Label.NORMAL))

    corners = unproject_array(np.array([[-half, -half], [half, half]]), origin)
    bbox = BBox(float(corners[0, 0]), float(corners[0, 1]),
                float(corners[1, 0]), float(corners[1, 1]))
    logger.info("Synthesized %d trips over %d O-D pairs on a %.0f m grid",
                params.n_trips, len(pairs), params.grid_extent_m)
    return Corpus(tuple(trajectories), bbox, bbox.centroid)

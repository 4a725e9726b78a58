"""
Shared fixtures for the Trip Privacy Bench test suite.
"""

import os

import numpy as np
import pytest

from trip_privacy_bench.synth import SynthParams, synth_corpus
from trip_privacy_bench.trajectory import BBox, Corpus, GeoPoint, Label, Trajectory, unproject_array

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
PORTO_CENTER = GeoPoint(-8.61, 41.15)


@pytest.fixture
def porto_sample():
    return os.path.join(FIXTURES, "porto_sample.csv")


@pytest.fixture(scope="session")
def small_corpus():
    """120 synthetic trips over 6 O-D pairs (20 trips per group)."""
    params = SynthParams(n_trips=120, n_od_pairs=6, grid_extent_m=3000.0, seed=3)
    return synth_corpus(params)


@pytest.fixture(scope="session")
def wide_bbox():
    """A 20 km square around Porto, large enough that attacks never clip."""
    corners = unproject_array(np.array([[-10_000.0, -10_000.0], [10_000.0, 10_000.0]]), PORTO_CENTER)
    return BBox(float(corners[0, 0]), float(corners[0, 1]), float(corners[1, 0]), float(corners[1, 1]))


def planar_trip(trip_id, xy, origin=PORTO_CENTER, label=Label.NORMAL):
    """Trajectory from planar meters around origin."""
    return Trajectory(trip_id, unproject_array(np.asarray(xy, dtype=float), origin), label)


def straight_trip(trip_id="T1", n=20, step=100.0, y=0.0, origin=PORTO_CENTER):
    """An eastbound trip of n points spaced step meters apart."""
    xs = np.arange(n) * step - (n - 1) * step / 2.0
    return planar_trip(trip_id, np.column_stack([xs, np.full(n, y)]), origin)


@pytest.fixture
def line_corpus(wide_bbox):
    trips = [straight_trip(f"L{k}", y=5.0 * k) for k in range(6)]
    return Corpus(tuple(trips), wide_bbox, PORTO_CENTER)

import numpy as np
import pytest

from trip_privacy_bench.errors import ConfigError
from trip_privacy_bench.frechet import discrete_frechet
from trip_privacy_bench.synth import SynthParams, grid_nodes, sample_route, synth_corpus
from trip_privacy_bench.trajectory import Label, group_by_od, haversine_m


def test_synth_is_deterministic():
    params = SynthParams(n_trips=30, n_od_pairs=5, grid_extent_m=3000.0, seed=9)
    a, b = synth_corpus(params), synth_corpus(params)
    assert a.ids == b.ids
    assert all(np.array_equal(x.coords, y.coords) for x, y in zip(a, b))


def test_synth_seed_changes_corpus():
    a = synth_corpus(SynthParams(n_trips=10, n_od_pairs=5, grid_extent_m=3000.0, seed=1))
    b = synth_corpus(SynthParams(n_trips=10, n_od_pairs=5, grid_extent_m=3000.0, seed=2))
    assert not all(np.array_equal(x.coords, y.coords) for x, y in zip(a, b))


def test_synth_corpus_shape(small_corpus):
    assert len(small_corpus) == 120
    assert small_corpus.ids[0] == "S000000"
    assert all(t.label is Label.NORMAL for t in small_corpus)
    assert small_corpus.bbox.contains(np.vstack([t.coords for t in small_corpus]))
    assert all(len(t) >= 11 for t in small_corpus)


def test_two_routes_per_pair_share_od_groups():
    params = SynthParams(n_trips=40, n_od_pairs=4, grid_extent_m=3000.0, routes_per_pair=2, seed=5)
    corpus = synth_corpus(params)
    assert len(group_by_od(corpus)) == 4


def test_grid_nodes_sit_on_cell_centres():
    nodes = grid_nodes(SynthParams(grid_extent_m=3000.0))
    assert nodes.min() == pytest.approx(-1400.0)
    assert nodes.max() == pytest.approx(1400.0)
    assert len(nodes) == 64


def test_sample_route_ends_at_last_vertex():
    route = np.array([[0.0, 0.0], [1000.0, 0.0], [1000.0, 420.0]])
    pts = sample_route(route, 150.0)
    assert np.allclose(pts[-1], [1000.0, 420.0])
    steps = np.hypot(*np.diff(pts[:-1], axis=0).T)
    assert np.all(steps <= 150.0 + 1e-9)


@pytest.mark.parametrize("changes", [
    {"routes_per_pair": 3},
    {"n_trips": 0},
    {"jitter_m": -1.0},
    {"n_od_pairs": 10_000},
])
def test_invalid_params(changes):
    params = SynthParams(grid_extent_m=3000.0, **changes)
    with pytest.raises(ConfigError):
        synth_corpus(params)


@pytest.fixture(scope="module")
def clean_corpus():
    return synth_corpus(SynthParams(n_trips=20, n_od_pairs=4, grid_extent_m=3000.0, jitter_m=0.0,
                                    routes_per_pair=1, seed=8))


def test_points_are_spaced_by_speed_times_period(clean_corpus):
    steps = np.concatenate([haversine_m(t.coords[:-1, 0], t.coords[:-1, 1],
                                        t.coords[1:, 0], t.coords[1:, 1]) for t in clean_corpus])
    assert np.median(steps) == pytest.approx(150.0, abs=0.5)
    assert steps.max() <= 150.0 + 0.5


def test_route_siblings_coincide_without_jitter(clean_corpus):
    trips = list(clean_corpus)
    for k in range(len(trips) - 4):
        assert discrete_frechet(trips[k], trips[k + 4]) == 0.0

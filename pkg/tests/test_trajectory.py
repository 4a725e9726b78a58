import itertools

import numpy as np
import pytest

from conftest import PORTO_CENTER, planar_trip, straight_trip
from trip_privacy_bench.config import DEFAULT_CELL_SIDE_M
from trip_privacy_bench.trajectory import (BBox, Corpus, GeoPoint, Label, PlanarPoint, Trajectory,
                                           format_polyline, group_by_od, haversine_m, od_key,
                                           parse_polyline, path_length, project, project_array,
                                           split_test, translate, unproject, unproject_array)


def test_projection_round_trip():
    p = GeoPoint(-8.6, 41.16)
    back = unproject(project(p, PORTO_CENTER), PORTO_CENTER)
    assert back.lon == pytest.approx(p.lon, abs=1e-12)
    assert back.lat == pytest.approx(p.lat, abs=1e-12)


def test_projection_matches_haversine_at_city_scale():
    p = unproject(PlanarPoint(1000.0, 0.0), PORTO_CENTER)
    d = haversine_m(PORTO_CENTER.lon, PORTO_CENTER.lat, p.lon, p.lat)
    assert d == pytest.approx(1000.0, abs=0.5)


def test_geopoint_rejects_out_of_range():
    with pytest.raises(ValueError):
        GeoPoint(200.0, 0.0)


@pytest.mark.parametrize("coords", [
    [[-8.61, 41.15]],
    [[-8.61, 41.15], [np.nan, 41.15]],
    [[-8.61, 41.15], [-8.61, 95.0]],
])
def test_trajectory_validation(coords):
    with pytest.raises(ValueError):
        Trajectory("bad", coords)


def test_trajectory_coords_are_read_only():
    t = straight_trip()
    with pytest.raises(ValueError):
        t.coords[0, 0] = 0.0


def test_path_length_of_two_point_trip():
    t = Trajectory("T", [[-8.61, 41.15], [-8.60, 41.15]])
    assert path_length(t) == pytest.approx(haversine_m(-8.61, 41.15, -8.60, 41.15))


def test_path_length_of_straight_trip():
    t = straight_trip(n=11, step=100.0)
    assert path_length(t) == pytest.approx(1000.0, rel=1e-3)


def test_bbox_clip_and_contains():
    bbox = BBox(-8.62, 41.14, -8.60, 41.16)
    clipped = bbox.clip([[-8.70, 41.15], [-8.61, 41.20]])
    assert bbox.contains(clipped)
    assert clipped.tolist() == [[-8.62, 41.15], [-8.61, 41.16]]
    assert not bbox.contains([[-8.70, 41.15]])


def test_polyline_format_round_trips_exactly():
    coords = np.array([[-8.618643, 41.141412], [-8.618499, 41.141376], [-8.620326, 41.14251]])
    assert np.array_equal(parse_polyline(format_polyline(coords)), coords)


def test_parse_polyline_rejects_bad_shapes():
    with pytest.raises(ValueError):
        parse_polyline("[]")
    with pytest.raises(ValueError):
        parse_polyline("[[1.0, 2.0, 3.0]]")


def test_corpus_rejects_duplicate_ids():
    t = straight_trip("dup")
    with pytest.raises(ValueError):
        Corpus.from_trajectories([t, straight_trip("dup", y=10.0)])


def test_corpus_without_labels_hides_truth(line_corpus):
    hidden = line_corpus.without_labels()
    assert all(t.label is Label.UNKNOWN for t in hidden)
    assert all(t.label is Label.NORMAL for t in line_corpus)
    assert hidden.ids == line_corpus.ids


def test_corpus_subset_keeps_bbox(line_corpus):
    sub = line_corpus.subset(["L2", "L0"])
    assert sub.ids == ["L2", "L0"]
    assert sub.bbox == line_corpus.bbox
    assert sub.projection_origin == line_corpus.projection_origin


def test_od_key_depends_only_on_endpoints(wide_bbox):
    a = planar_trip("A", [[50.0, 50.0], [500.0, 800.0], [1050.0, 50.0]])
    b = planar_trip("B", [[60.0, 70.0], [400.0, -900.0], [1040.0, 60.0]])
    assert od_key(a, wide_bbox) == od_key(b, wide_bbox)
    c = planar_trip("C", [[50.0, 50.0], [3050.0, 50.0]])
    assert od_key(a, wide_bbox) != od_key(c, wide_bbox)


def test_group_by_od_recovers_synthetic_pairs(small_corpus):
    groups = group_by_od(small_corpus)
    assert len(groups) == 6
    assert sorted(len(ids) for ids in groups.values()) == [20] * 6


def test_split_test_per_group_rules(small_corpus):
    groups = group_by_od(small_corpus)
    train, test = split_test(groups, per_group=5, seed=1)
    assert len(test) == 30
    assert not set(train) & set(test)
    assert sorted(train + test) == sorted(small_corpus.ids)
    for ids in groups.values():
        assert len(set(ids) & set(test)) == 5


def test_split_test_keeps_singletons_in_train(line_corpus):
    groups = {k: v[:1] for k, v in group_by_od(line_corpus).items()}
    train, test = split_test(groups, per_group=5, seed=0)
    assert test == []
    assert len(train) == len(groups)


def test_split_test_caps_at_group_size_minus_one(line_corpus):
    groups = group_by_od(line_corpus)
    train, test = split_test(groups, per_group=10, seed=0)
    assert len(test) == len(line_corpus) - len(groups)


def test_split_test_is_deterministic(small_corpus):
    groups = group_by_od(small_corpus)
    assert split_test(groups, 5, 42) == split_test(groups, 5, 42)
    assert split_test(groups, 5, 42) != split_test(groups, 5, 43)


def test_translate_shifts_planar_coordinates():
    t = straight_trip(n=5)
    moved = translate(t, 30.0, -20.0, PORTO_CENTER)
    delta = project_array(moved.coords, PORTO_CENTER) - project_array(t.coords, PORTO_CENTER)
    assert np.allclose(delta, [[30.0, -20.0]] * 5, atol=1e-6)
    assert moved.id == t.id


def test_projection_round_trip_within_ten_km():
    rng = np.random.default_rng(31)
    radius = 10_000.0 * np.sqrt(rng.uniform(size=1000))
    angle = rng.uniform(0.0, 2.0 * np.pi, size=1000)
    xy = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    lonlat = unproject_array(xy, PORTO_CENTER)
    back = unproject_array(project_array(lonlat, PORTO_CENTER), PORTO_CENTER)
    error = haversine_m(lonlat[:, 0], lonlat[:, 1], back[:, 0], back[:, 1])
    assert np.all(error < 0.5)
    to_origin = haversine_m(PORTO_CENTER.lon, PORTO_CENTER.lat, lonlat[:, 0], lonlat[:, 1])
    assert np.allclose(np.hypot(xy[:, 0], xy[:, 1]), to_origin, rtol=1e-3, atol=0.5)


def random_walk_trip(rng, trip_id="W", n=30):
    steps = rng.normal(0.0, 120.0, size=(n - 1, 2))
    return planar_trip(trip_id, np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)]))


def test_path_length_is_translation_invariant():
    rng = np.random.default_rng(32)
    for _ in range(50):
        t = random_walk_trip(rng)
        dx, dy = rng.uniform(-3500.0, 3500.0, size=2)
        moved = translate(t, dx, dy, PORTO_CENTER)
        assert path_length(moved) == pytest.approx(path_length(t), rel=1e-3)


def test_path_length_adds_over_concatenation():
    rng = np.random.default_rng(33)
    for _ in range(50):
        t = random_walk_trip(rng)
        k = int(rng.integers(1, len(t) - 1))
        head = Trajectory("H", t.coords[:k + 1])
        tail = Trajectory("T", t.coords[k:])
        assert path_length(head) + path_length(tail) == pytest.approx(path_length(t), rel=1e-12)


def test_group_by_od_matches_pairwise_cell_comparison(wide_bbox):
    rng = np.random.default_rng(34)
    hubs = rng.uniform(-8000.0, 8000.0, size=(4, 2))
    trips = []
    for k in range(100):
        o, d = hubs[rng.integers(4)], hubs[rng.integers(4)]
        ends = np.vstack([o, d]) + rng.normal(0.0, 100.0, size=(2, 2))
        mid = ends.mean(axis=0) + rng.normal(0.0, 500.0, size=2)
        trips.append(planar_trip(f"R{k:03d}", [ends[0], mid, ends[1]]))
    corpus = Corpus(tuple(trips), wide_bbox, PORTO_CENTER)

    origin = wide_bbox.centroid
    xmin, ymin, _, _ = wide_bbox.planar_extent(origin)

    def cells(t):
        ends = project_array(t.coords[[0, -1]], origin)
        return tuple(int(v) for v in np.floor((ends - [xmin, ymin]) / DEFAULT_CELL_SIDE_M).ravel())

    group_of = {trip_id: key for key, ids in group_by_od(corpus).items() for trip_id in ids}
    assert sorted(group_of) == sorted(corpus.ids)
    for a, b in itertools.combinations(trips, 2):
        assert (group_of[a.id] == group_of[b.id]) == (cells(a) == cells(b))

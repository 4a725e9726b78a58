"""
Trajectory data model, planar geometry, Porto ingestion, O-D grouping and test splitting.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import (DEFAULT_CELL_SIDE_M, DEFAULT_MIN_POINTS, EARTH_RADIUS_M,
                     PROJECTION_RADIUS_LIMIT_M)
from .errors import CorpusReadError
from .utils import derive_rng

logger = logging.getLogger(__name__)


class Label(str, Enum):
    NORMAL = "Normal"
    MALICIOUS = "Malicious"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 position in degrees."""

    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0) or not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"Invalid coordinates lon={self.lon}, lat={self.lat}")


@dataclass(frozen=True)
class PlanarPoint:
    """Meters east (x) and north (y) of a projection origin."""

    x: float
    y: float


def project(p, origin):
    """Local equirectangular projection of a GeoPoint around origin."""
    xy = project_array(np.array([[p.lon, p.lat]]), origin)[0]
    return PlanarPoint(float(xy[0]), float(xy[1]))


def unproject(pp, origin):
    """Inverse of project."""
    ll = unproject_array(np.array([[pp.x, pp.y]]), origin)[0]
    return GeoPoint(float(ll[0]), float(ll[1]))


def project_array(lonlat, origin):
    """Project an (n, 2) lon/lat array to planar meters."""
    lonlat = np.asarray(lonlat, dtype=float)
    cos_lat0 = math.cos(math.radians(origin.lat))
    out = np.empty_like(lonlat)
    out[:, 0] = EARTH_RADIUS_M * np.radians(lonlat[:, 0] - origin.lon) * cos_lat0
    out[:, 1] = EARTH_RADIUS_M * np.radians(lonlat[:, 1] - origin.lat)
    return out


def unproject_array(xy, origin):
    """Inverse of project_array."""
    xy = np.asarray(xy, dtype=float)
    cos_lat0 = math.cos(math.radians(origin.lat))
    out = np.empty_like(xy)
    out[:, 0] = origin.lon + np.degrees(xy[:, 0] / (EARTH_RADIUS_M * cos_lat0))
    out[:, 1] = origin.lat + np.degrees(xy[:, 1] / EARTH_RADIUS_M)
    return out


def haversine_m(lon1, lat1, lon2, lat2):
    """Great-circle distance in meters; accepts scalars or arrays."""
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    a = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class BBox:
    """Lon/lat bounding box; doubles as the feasibility region of attacks."""

    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    @classmethod
    def from_coords(cls, lonlat):
        lonlat = np.asarray(lonlat, dtype=float)
        lo = lonlat.min(axis=0)
        hi = lonlat.max(axis=0)
        return cls(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    @property
    def centroid(self):
        return GeoPoint((self.min_lon + self.max_lon) / 2.0, (self.min_lat + self.max_lat) / 2.0)

    def contains(self, lonlat):
        lonlat = np.asarray(lonlat, dtype=float)
        return bool(np.all((lonlat[:, 0] >= self.min_lon) & (lonlat[:, 0] <= self.max_lon)
                           & (lonlat[:, 1] >= self.min_lat) & (lonlat[:, 1] <= self.max_lat)))

    def clip(self, lonlat):
        lonlat = np.array(lonlat, dtype=float)
        lonlat[:, 0] = np.clip(lonlat[:, 0], self.min_lon, self.max_lon)
        lonlat[:, 1] = np.clip(lonlat[:, 1], self.min_lat, self.max_lat)
        return lonlat

    def planar_extent(self, origin=None):
        """(xmin, ymin, xmax, ymax) in meters around origin (default: centroid)."""
        origin = origin or self.centroid
        corners = project_array(
            np.array([[self.min_lon, self.min_lat], [self.max_lon, self.max_lat]]), origin)
        return (float(corners[0, 0]), float(corners[0, 1]),
                float(corners[1, 0]), float(corners[1, 1]))

    def to_dict(self):
        return {"min_lon": self.min_lon, "min_lat": self.min_lat,
                "max_lon": self.max_lon, "max_lat": self.max_lat}


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered GPS trace; coords is a read-only (n, 2) array of lon/lat."""

    id: str
    coords: np.ndarray
    label: Label = Label.NORMAL
    _planar_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"Trajectory {self.id}: coords must have shape (n, 2)")
        if coords.shape[0] < 2:
            raise ValueError(f"Trajectory {self.id}: needs at least 2 points, got {coords.shape[0]}")
        if not np.all(np.isfinite(coords)):
            raise ValueError(f"Trajectory {self.id}: non-finite coordinates")
        if (np.any(np.abs(coords[:, 0]) > 180.0) or np.any(np.abs(coords[:, 1]) > 90.0)):
            raise ValueError(f"Trajectory {self.id}: coordinates out of WGS84 range")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "label", Label(self.label))

    def __len__(self):
        return self.coords.shape[0]

    @property
    def points(self):
        return [GeoPoint(float(lon), float(lat)) for lon, lat in self.coords]

    @property
    def origin_point(self):
        return GeoPoint(float(self.coords[0, 0]), float(self.coords[0, 1]))

    def planar(self, origin):
        """Planar (n, 2) coordinates around origin, cached per origin."""
        key = (origin.lon, origin.lat)
        cached = self._planar_cache.get(key)
        if cached is None:
            cached = project_array(self.coords, origin)
            cached.setflags(write=False)
            self._planar_cache[key] = cached
        return cached

    def with_coords(self, coords, **changes):
        return Trajectory(changes.get("id", self.id), coords, changes.get("label", self.label))

    def with_label(self, label):
        return Trajectory(self.id, self.coords, label)

    def same_points(self, other):
        return np.array_equal(self.coords, other.coords)


def path_length(t):
    """Sum of haversine distances between consecutive points, in meters."""
    c = t.coords
    return float(np.sum(haversine_m(c[:-1, 0], c[:-1, 1], c[1:, 0], c[1:, 1])))


@dataclass(frozen=True)
class ODKey:
    origin_cell: int
    dest_cell: int

    def __str__(self):
        return f"{self.origin_cell}-{self.dest_cell}"


@dataclass(frozen=True, eq=False)
class Corpus:
    """Immutable trip collection with its feasibility bbox and projection origin."""

    trajectories: tuple
    bbox: BBox
    projection_origin: GeoPoint
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        index = {}
        for i, t in enumerate(trajs):
            if t.id in index:
                raise ValueError(f"Duplicate trip id {t.id}")
            index[t.id] = i
        self._index.update(index)

    @classmethod
    def from_trajectories(cls, trajectories, bbox=None, origin=None):
        trajectories = tuple(trajectories)
        if bbox is None:
            if not trajectories:
                raise ValueError("Cannot derive a bbox from an empty corpus")
            bbox = BBox.from_coords(np.vstack([t.coords for t in trajectories]))
        origin = origin or bbox.centroid
        xmin, ymin, xmax, ymax = bbox.planar_extent(origin)
        if max(-xmin, -ymin, xmax, ymax) > PROJECTION_RADIUS_LIMIT_M:
            logger.warning("Corpus extends beyond %.0f km of its projection origin; "
                           "planar distances will be distorted", PROJECTION_RADIUS_LIMIT_M / 1000.0)
        return cls(trajectories, bbox, origin)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __contains__(self, trip_id):
        return trip_id in self._index

    @property
    def ids(self):
        return [t.id for t in self.trajectories]

    def get(self, trip_id):
        return self.trajectories[self._index[trip_id]]

    def subset(self, ids):
        return Corpus(tuple(self.get(i) for i in ids), self.bbox, self.projection_origin)

    def replace_trajectories(self, trajectories):
        return Corpus(tuple(trajectories), self.bbox, self.projection_origin)

    def without_labels(self):
        """Copy with every label replaced by UNKNOWN (what a detector may see)."""
        return self.replace_trajectories(t.with_label(Label.UNKNOWN) for t in self.trajectories)

    def labels(self):
        return {t.id: t.label for t in self.trajectories}

    def planar_extent(self):
        return self.bbox.planar_extent(self.projection_origin)


@dataclass
class IngestStats:
    rows: int = 0
    kept: int = 0
    missing_data: int = 0
    malformed: int = 0
    too_short: int = 0

    @property
    def dropped(self):
        return self.rows - self.kept


def parse_polyline(text):
    """Parse a Porto POLYLINE JSON string into an (n, 2) lon/lat array."""
    data = json.loads(text)
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("polyline must be a non-empty list of [lon, lat] pairs")
    return arr


def format_polyline(coords):
    """Serialize an (n, 2) array as a Porto POLYLINE string (round-trips exactly)."""
    return json.dumps([[float(lon), float(lat)] for lon, lat in coords], separators=(",", ":"))


def read_porto(csv_path, min_points=DEFAULT_MIN_POINTS):
    """Read a Porto-schema CSV, returning (Corpus, IngestStats).

    Rows flagged MISSING_DATA=True and malformed polylines are skipped;
    only trajectories with strictly more than min_points points are kept.
    """
    from .database import read_trip_table

    table = read_trip_table(csv_path)
    stats = IngestStats(rows=len(table))
    trajectories = []
    for row in table.itertuples(index=False):
        row = row._asdict()
        if str(row["MISSING_DATA"]).strip().lower() == "true":
            stats.missing_data += 1
            continue
        try:
            coords = parse_polyline(row["POLYLINE"])
            if coords.shape[0] <= min_points:
                stats.too_short += 1
                continue
            label = Label(row.get("LABEL") or Label.NORMAL)
            trajectories.append(Trajectory(str(row["TRIP_ID"]), coords, label))
        except (ValueError, TypeError) as e:
            stats.malformed += 1
            logger.warning("Skipping trip %s: %s", row.get("TRIP_ID"), e)
    stats.kept = len(trajectories)
    if stats.malformed:
        logger.warning("Skipped %d malformed rows in %s", stats.malformed, csv_path)
    if not trajectories:
        raise CorpusReadError(f"No usable trajectories in {csv_path}")
    corpus = Corpus.from_trajectories(trajectories)
    logger.info("Ingested %d of %d trips from %s (missing=%d, short=%d, malformed=%d)",
                stats.kept, stats.rows, csv_path, stats.missing_data, stats.too_short, stats.malformed)
    return corpus, stats


def ingest_porto(csv_path, min_points=DEFAULT_MIN_POINTS):
    """Ingest a Porto-schema CSV into a Corpus."""
    return read_porto(csv_path, min_points)[0]


def od_cell(xy, extent, cell_side):
    """Grid cell index of planar points (n, 2) inside extent (xmin, ymin, xmax, ymax)."""
    xmin, ymin, xmax, ymax = extent
    n_cols = max(1, int(math.ceil((xmax - xmin) / cell_side)))
    n_rows = max(1, int(math.ceil((ymax - ymin) / cell_side)))
    xy = np.atleast_2d(xy)
    cols = np.clip(np.floor((xy[:, 0] - xmin) / cell_side), 0, n_cols - 1).astype(int)
    rows = np.clip(np.floor((xy[:, 1] - ymin) / cell_side), 0, n_rows - 1).astype(int)
    return rows * n_cols + cols


def od_key(t, bbox, cell_side=DEFAULT_CELL_SIDE_M):
    """O-D key of one trajectory; a pure function of its endpoints, bbox and cell side."""
    origin = bbox.centroid
    ends = project_array(t.coords[[0, -1]], origin)
    cells = od_cell(ends, bbox.planar_extent(origin), cell_side)
    return ODKey(int(cells[0]), int(cells[1]))


def group_by_od(corpus, cell_side=DEFAULT_CELL_SIDE_M):
    """Map ODKey -> list of trip ids (corpus order within each group)."""
    if len(corpus) == 0:
        raise ValueError("Cannot group an empty corpus")
    if cell_side <= 0:
        raise ValueError("cell_side must be positive")
    groups = {}
    for t in corpus:
        groups.setdefault(od_key(t, corpus.bbox, cell_side), []).append(t.id)
    logger.debug("Grouped %d trips into %d O-D groups", len(corpus), len(groups))
    return groups


def split_test(groups, per_group, seed):
    """Split grouped trip ids into (train ids, test ids).

    Each group sends min(per_group, size - 1) randomly chosen trips to test;
    a single-trip group stays in train.
    """
    if per_group < 1:
        raise ValueError("per_group must be >= 1")
    train, test = [], []
    for key in sorted(groups, key=lambda k: (k.origin_cell, k.dest_cell)):
        ids = sorted(groups[key])
        n_test = min(per_group, len(ids) - 1) if len(ids) > 1 else 0
        order = derive_rng(seed, "split", key.origin_cell, key.dest_cell).permutation(len(ids))
        chosen = {ids[i] for i in order[:n_test]}
        for trip_id in ids:
            (test if trip_id in chosen else train).append(trip_id)
    return sorted(train), sorted(test)


def translate(t, dx, dy, origin):
    """Shift a trajectory by (dx, dy) meters on the plane around origin."""
    xy = project_array(t.coords, origin) + np.array([dx, dy])
    return t.with_coords(unproject_array(xy, origin))

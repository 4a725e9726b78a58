"""
File persistence for Trip Privacy Bench.
Handles corpus CSVs and their metadata sidecars, stage outputs (perturbation
reports, attack manifests, scores), the Frechet matrix cache, experiment results
and model checkpoints.
"""

import json
import logging
import os
import tempfile
import zipfile

import numpy as np
import pandas as pd

from .config import (LABEL_COLUMN, PORTO_COLUMNS, RESULTS_FILE, ROC_DIR, SPLIT_COLUMN,
                     TIMINGS_FILE)
from .errors import ConfigError, CorpusReadError, SchemaError, StorageError
from .trajectory import (BBox, Corpus, GeoPoint, Label, Trajectory, format_polyline,
                         parse_polyline)
from .utils import content_hash, format_float, parse_float

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("trip_id", "source_trip_id", "c", "q", "od_mode", "m", "reward_gain_m")
SCORE_COLUMNS = ("trip_id", "od_key", "score_m", "label")
REPORT_COLUMNS = ("trip_id", "mode", "n_points", "n_predicted", "epsilon_spent_total")
RESULT_COLUMNS = ("detector", "privacy", "epsilon", "c", "q", "od_mode", "status", "auc",
                  "n_pos", "n_neg", "n_manifest", "min_pts", "message")
TIMING_COLUMNS = ("detector", "privacy", "epsilon", "c", "q", "od_mode", "runtime_s",
                  "seconds_per_kpair")


def read_table(path, required):
    """Read a CSV as strings and check that the required columns exist."""
    try:
        table = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise CorpusReadError(f"File not found: {path}")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise CorpusReadError(f"Cannot read {path}: {e}")
    for column in required:
        if column not in table.columns:
            raise SchemaError(f"{path} is missing column {column}", column)
    return table


def read_trip_table(csv_path):
    """Read a Porto-schema trip table (TRIP_ID, MISSING_DATA, POLYLINE, optional LABEL)."""
    return read_table(csv_path, PORTO_COLUMNS)


def _write_frame(rows, columns, path):
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        pd.DataFrame(rows, columns=list(columns)).to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}")


def meta_path(csv_path):
    return os.path.splitext(csv_path)[0] + ".meta.json"


def write_corpus(corpus, csv_path, splits=None, extra_meta=None):
    """Write a corpus CSV plus its metadata sidecar (bbox, projection origin)."""
    splits = splits or {}
    rows = [{"TRIP_ID": t.id, "MISSING_DATA": "False", "POLYLINE": format_polyline(t.coords),
             LABEL_COLUMN: t.label.value, SPLIT_COLUMN: splits.get(t.id, "")}
            for t in corpus]
    _write_frame(rows, PORTO_COLUMNS + (LABEL_COLUMN, SPLIT_COLUMN), csv_path)
    meta = {
        "bbox": corpus.bbox.to_dict(),
        "projection_origin": {"lon": corpus.projection_origin.lon,
                              "lat": corpus.projection_origin.lat},
        "n_trips": len(corpus),
    }
    meta.update(extra_meta or {})
    try:
        with open(meta_path(csv_path), "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
    except OSError as e:
        raise StorageError(f"Cannot write {meta_path(csv_path)}: {e}")
    logger.info("Wrote %d trips to %s", len(corpus), csv_path)


def load_corpus(csv_path):
    """Load a corpus written by write_corpus; returns (Corpus, splits by trip id).

    Without a sidecar the bbox is derived from the coordinates.
    """
    table = read_trip_table(csv_path)
    trajectories, splits = [], {}
    for row in table.to_dict("records"):
        if str(row["MISSING_DATA"]).strip().lower() == "true":
            continue
        try:
            label = Label(row.get(LABEL_COLUMN) or Label.NORMAL)
            trajectories.append(Trajectory(row["TRIP_ID"], parse_polyline(row["POLYLINE"]), label))
        except (ValueError, TypeError) as e:
            raise SchemaError(f"{csv_path}: bad row {row['TRIP_ID']}: {e}", "POLYLINE")
        if row.get(SPLIT_COLUMN):
            splits[row["TRIP_ID"]] = row[SPLIT_COLUMN]
    if not trajectories:
        raise CorpusReadError(f"No trajectories in {csv_path}")

    bbox = origin = None
    if os.path.exists(meta_path(csv_path)):
        try:
            with open(meta_path(csv_path), "r") as f:
                meta = json.load(f)
            bbox = BBox(**meta["bbox"])
            origin = GeoPoint(**meta["projection_origin"])
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
            raise CorpusReadError(f"Cannot read {meta_path(csv_path)}: {e}")
    try:
        corpus = Corpus.from_trajectories(trajectories, bbox, origin)
    except ValueError as e:
        raise SchemaError(f"{csv_path}: {e}", "TRIP_ID")
    return corpus, splits


def write_perturbation_report(reports, path):
    rows = [{"trip_id": r.trip_id, "mode": r.mode.value, "n_points": r.n_points,
             "n_predicted": r.n_predicted,
             "epsilon_spent_total": format_float(float(sum(r.epsilon_spent_per_point)))}
            for r in reports]
    _write_frame(rows, REPORT_COLUMNS, path)


def write_manifest(records, path):
    rows = [{"trip_id": r.trip_id, "source_trip_id": r.source_trip_id, "c": format_float(r.c),
             "q": format_float(r.q), "od_mode": r.od_mode, "m": r.m,
             "reward_gain_m": format_float(r.reward_gain_m)} for r in records]
    _write_frame(rows, MANIFEST_COLUMNS, path)


def read_manifest(path):
    from .attack import AttackRecord

    table = read_table(path, MANIFEST_COLUMNS)
    return [AttackRecord(r["trip_id"], r["source_trip_id"], parse_float(r["c"]),
                         parse_float(r["q"]), r["od_mode"], int(r["m"]),
                         parse_float(r["reward_gain_m"]))
            for r in table.to_dict("records")]


def write_scores(scored, path):
    rows = [{"trip_id": s.trip_id, "od_key": s.od_key, "score_m": format_float(s.score),
             "label": s.truth.value} for s in scored]
    _write_frame(rows, SCORE_COLUMNS, path)


def read_scores(path):
    from .evaluation import ScoredTrip

    table = read_table(path, SCORE_COLUMNS)
    return [ScoredTrip(r["trip_id"], Label(r["label"]), parse_float(r["score_m"]), r["od_key"])
            for r in table.to_dict("records")]


class MatrixCache:
    """On-disk cache of Frechet matrices keyed by trip ids, coordinates and origin."""

    def __init__(self, directory):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def _path(self, trips, origin):
        key = content_hash(*[t.coords for t in trips],
                           extra=[t.id for t in trips] + [origin.lon, origin.lat])
        return os.path.join(self.directory, f"{key}.npz")

    def load(self, trips, origin):
        from .frechet import DistanceMatrix

        path = self._path(trips, origin)
        if not os.path.exists(path):
            return None
        try:
            with np.load(path) as data:
                values = data["values"]
        except (OSError, KeyError, ValueError, EOFError, zipfile.BadZipFile) as e:
            logger.warning("Ignoring unreadable matrix cache %s: %s", path, e)
            return None
        return DistanceMatrix([t.id for t in trips], values, 0.0)

    def save(self, trips, origin, matrix):
        # readers only ever see a complete .npz
        tmp_path = None
        try:
            fd, tmp_path = tempfile.mkstemp(suffix=".tmp", dir=self.directory)
            with os.fdopen(fd, "wb") as f:
                np.savez_compressed(f, values=matrix.values)
            os.replace(tmp_path, self._path(trips, origin))
        except OSError as e:
            logger.warning("Could not cache distance matrix: %s", e)
            if tmp_path and os.path.exists(tmp_path):
                os.remove(tmp_path)


def privacy_columns(setting):
    epsilon = "" if setting.epsilon is None else format_float(float(setting.epsilon))
    return setting.mode.value, epsilon


def row_slug(row):
    """File stem of a results row's ROC point file."""
    epsilon = row["epsilon"] or "na"
    return f"{row['detector']}_{row['privacy']}_{epsilon}_{row['c']}_{row['q']}_{row['od_mode']}"


class ResultsDatabase:
    """Manages experiment result persistence in an output directory."""

    def __init__(self, out_dir):
        self.out_dir = out_dir

    @property
    def results_path(self):
        return os.path.join(self.out_dir, RESULTS_FILE)

    @property
    def timings_path(self):
        return os.path.join(self.out_dir, TIMINGS_FILE)

    def result_row(self, result):
        cell = result.cell
        privacy, epsilon = privacy_columns(cell.privacy)
        return {
            "detector": cell.detector, "privacy": privacy, "epsilon": epsilon,
            "c": format_float(cell.c), "q": format_float(cell.q), "od_mode": cell.od_mode.value,
            "status": result.status, "auc": format_float(result.auc),
            "n_pos": result.n_pos, "n_neg": result.n_neg, "n_manifest": result.n_manifest,
            "min_pts": "" if result.min_pts is None else result.min_pts,
            "message": result.message,
        }

    def save_results(self, results):
        """Write results.csv, timings.csv and one ROC point file per scored cell."""
        try:
            rows = [self.result_row(r) for r in results]
            _write_frame(rows, RESULT_COLUMNS, self.results_path)
            timings = [{**{k: row[k] for k in TIMING_COLUMNS[:6]},
                        "runtime_s": format_float(r.runtime_s),
                        "seconds_per_kpair": format_float(r.seconds_per_kpair)}
                       for r, row in zip(results, rows)]
            _write_frame(timings, TIMING_COLUMNS, self.timings_path)
            for r, row in zip(results, rows):
                if r.roc is not None:
                    points = [{"fpr": format_float(x), "tpr": format_float(y)} for x, y in r.roc.points]
                    _write_frame(points, ("fpr", "tpr"),
                                 os.path.join(self.out_dir, ROC_DIR, row_slug(row) + ".csv"))
            return True, f"Saved {len(rows)} result rows"
        except StorageError as e:
            return False, f"Error saving: {e}"

    def load_results(self):
        """Load results.csv rows as dicts of strings."""
        if not os.path.exists(self.results_path):
            return [], f"No results file in {self.out_dir}"
        try:
            table = read_table(self.results_path, RESULT_COLUMNS)
        except (CorpusReadError, SchemaError) as e:
            return [], f"Error loading results: {e}"
        rows = table.to_dict("records")
        if not rows:
            return [], "Results file is empty"
        return rows, f"Loaded {len(rows)} result rows"

    def load_roc_points(self, row):
        path = os.path.join(self.out_dir, ROC_DIR, row_slug(row) + ".csv")
        table = read_table(path, ("fpr", "tpr"))
        return [(float(r["fpr"]), float(r["tpr"])) for r in table.to_dict("records")]


def result_from_row(row):
    """Rebuild a CellResult (without ROC points) from a results.csv row."""
    from .attack import ODMode
    from .evaluation import CellResult, GridCell, PrivacySetting

    try:
        setting = PrivacySetting(row["privacy"], parse_float(row["epsilon"]))
        cell = GridCell(row["detector"], setting, parse_float(row["c"]), parse_float(row["q"]),
                        ODMode(row["od_mode"]))
        return CellResult(cell, row["status"], parse_float(row["auc"]), int(row["n_pos"] or 0),
                          int(row["n_neg"] or 0), int(row["n_manifest"] or 0),
                          int(row["min_pts"]) if row["min_pts"] else None, message=row["message"])
    except (KeyError, ValueError) as e:
        raise SchemaError(f"Bad results row {row}: {e}")


def save_model(model, path):
    try:
        with open(path, "w") as f:
            json.dump(model.to_dict(), f)
    except OSError as e:
        raise StorageError(f"Cannot write checkpoint {path}: {e}")


def load_model(path):
    from .detectors.seq_model import SeqModel

    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise StorageError(f"Checkpoint not found: {path}")
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read checkpoint {path}: {e}")
    return SeqModel.from_dict(data)

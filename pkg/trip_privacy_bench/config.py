"""
Configuration settings for the Trip Privacy Bench application.
"""

import copy
import json

from .errors import ConfigError

# Application info
APP_NAME = "Trip Privacy Bench"
VERSION = "1.0.0"
ENV_PREFIX = "TPB_"

# Geometry
EARTH_RADIUS_M = 6_371_000.0
PROJECTION_RADIUS_LIMIT_M = 50_000.0
PORTO_CENTER = (-8.61, 41.15)  # lon, lat

# Ingestion and grouping
DEFAULT_MIN_POINTS = 25
DEFAULT_CELL_SIDE_M = 200.0
DEFAULT_TEST_PER_GROUP = 5
PORTO_COLUMNS = ("TRIP_ID", "MISSING_DATA", "POLYLINE")
LABEL_COLUMN = "LABEL"
SPLIT_COLUMN = "SPLIT"

# Synthetic corpus defaults (15 s sampling matches the Porto feed)
SYNTH_DEFAULTS = {
    "n_trips": 2000,
    "n_od_pairs": 50,
    "grid_extent_m": 6000.0,
    "block_m": 400.0,
    "node_offset_m": 100.0,
    "speed_mps": 10.0,
    "sample_period_s": 15.0,
    "jitter_m": 10.0,
    "min_trip_m": 1500.0,
    "routes_per_pair": 1,
    "seed": 7,
}

# Privacy mechanisms
DEFAULT_EPSILONS = (0.1, 0.01)  # 1/meter, mean noise radius 2/epsilon
DEFAULT_TEST_FRACTION = 0.1
EPSILON_UNIT_NOTE = (
    "epsilon is per point in 1/meter: mean planar Laplace displacement is 2/epsilon "
    "(epsilon=0.1 -> 20 m, epsilon=0.01 -> 200 m)"
)

# Attacks: (c meters, q fraction)
DEFAULT_INTENTS = ((300.0, 0.5), (500.0, 0.7), (700.0, 1.0))
DEFAULT_ATTACK_FRACTION = 0.5
CALIBRATION_INTENT = (500.0, 0.7)

# Detectors
DEFAULT_PAIR_BUDGET = 2_000_000
MIN_PTS_CANDIDATES = (2, 3, 4, 5)
DEFAULT_DBSCAN = {
    "eps": 150.0,
    "min_pts": 3,
    "score_k": None,
}
DEFAULT_SEQ = {
    "hidden_dim": 32,
    "latent_dim": 8,
    "n_mixture": 1,
    "variational": False,
    "beta": 0.1,
    "learning_rate": 0.01,
    "epochs": 40,
    "batch_size": 32,
    "max_len": 32,
    "grad_clip": 5.0,
    "seed": 11,
}
CHECKPOINT_FORMAT_VERSION = 1

# Plot colors for ROC curves, keyed by detector/privacy family
CURVE_COLORS = {
    "dbscan/none": "#21759b",
    "dbscan/location": "#4267B2",
    "seq/none": "#E1306C",
    "seq/location": "#DB4437",
    "seq/trajectory": "#8A2BE2",
    "default": "#666666",
}

# Plot theme
LIGHT_THEME = {
    "bg_color": "#ffffff",
    "fg_color": "#333333",
    "grid_color": "#e0e0e0",
    "diagonal_color": "#bdbdbd",
    "font_family": "Arial, sans-serif",
}

# Results files
RESULTS_FILE = "results.csv"
TIMINGS_FILE = "timings.csv"
SUMMARY_FILE = "summary.md"
SUMMARY_HTML_FILE = "summary.html"
ROC_DIR = "roc"
PLOT_DIR = "plots"


# Run configuration file (JSON)
RUN_CONFIG_DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "corpus": {
        "source": "synth",
        "path": None,
        "min_points": DEFAULT_MIN_POINTS,
        "synth": dict(SYNTH_DEFAULTS),
    },
    "grid": {
        "privacy_modes": ["none", "location", "trajectory"],
        "epsilons": list(DEFAULT_EPSILONS),
        "intents": [list(i) for i in DEFAULT_INTENTS],
        "od_modes": ["same", "shifted"],
        "detectors": ["dbscan", "seq"],
        "attack_fraction": DEFAULT_ATTACK_FRACTION,
        "test_per_group": DEFAULT_TEST_PER_GROUP,
        "cell_side_m": DEFAULT_CELL_SIDE_M,
        "max_pairs": DEFAULT_PAIR_BUDGET,
        "test_fraction": DEFAULT_TEST_FRACTION,
        "calibrate_min_pts": True,
        "calibration_intent": list(CALIBRATION_INTENT),
    },
    "dbscan": dict(DEFAULT_DBSCAN),
    "seq": dict(DEFAULT_SEQ),
    "output": {
        "dir": "results",
        "cache_dir": None,
    },
}

_CHOICES = {
    "privacy_modes": {"none", "location", "trajectory"},
    "od_modes": {"same", "shifted"},
    "detectors": {"dbscan", "seq"},
}


class RunConfig:
    """Validated experiment configuration: file values merged over the defaults."""

    def __init__(self, data=None):
        self.data = _merge(RUN_CONFIG_DEFAULTS, data or {}, "")
        self.validate()

    def __getitem__(self, section):
        return self.data[section]

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        return cls(data)

    def override(self, section, key, value):
        """Apply a command line override; None leaves the value alone."""
        if value is None:
            return self
        target = self.data if section is None else self.data[section]
        if key not in target:
            raise ConfigError(f"Unknown config key {key}")
        target[key] = value
        self.validate()
        return self

    def validate(self):
        d = self.data
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(d["jobs"], int) or d["jobs"] < 1:
            raise ConfigError("jobs must be a positive integer")
        corpus = d["corpus"]
        if corpus["source"] not in ("synth", "porto", "file"):
            raise ConfigError("corpus.source must be synth, porto or file")
        if corpus["source"] != "synth" and not corpus["path"]:
            raise ConfigError(f"corpus.path is required for source {corpus['source']}")
        grid = d["grid"]
        for key, allowed in _CHOICES.items():
            values = grid[key]
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid.{key} must be a non-empty list")
            unknown = set(values) - allowed
            if unknown:
                raise ConfigError(f"grid.{key} has unknown values {sorted(unknown)}")
        if any(not isinstance(e, (int, float)) or e <= 0 for e in grid["epsilons"]):
            raise ConfigError("grid.epsilons must be positive numbers")
        for intent in grid["intents"] + [grid["calibration_intent"]]:
            if (not isinstance(intent, list) or len(intent) != 2 or intent[0] < 0
                    or not 0 <= intent[1] <= 1):
                raise ConfigError(f"Invalid intent {intent!r}: expected [c >= 0, 0 <= q <= 1]")
        if not 0 < grid["attack_fraction"] <= 1:
            raise ConfigError("grid.attack_fraction must lie in (0, 1]")
        if grid["test_per_group"] < 1 or grid["cell_side_m"] <= 0 or grid["max_pairs"] < 1:
            raise ConfigError("grid.test_per_group, cell_side_m and max_pairs must be positive")
        return self

    def to_dict(self):
        return copy.deepcopy(self.data)


def _merge(defaults, values, prefix):
    """Recursively merge values over defaults, rejecting unknown keys."""
    merged = {}
    for key in values:
        if key not in defaults:
            raise ConfigError(f"Unknown config key {prefix}{key}")
    for key, default in defaults.items():
        if isinstance(default, dict):
            given = values.get(key, {})
            if not isinstance(given, dict):
                raise ConfigError(f"Config section {prefix}{key} must be an object")
            merged[key] = _merge(default, given, f"{prefix}{key}.")
        else:
            merged[key] = copy.deepcopy(values.get(key, default))
    return merged

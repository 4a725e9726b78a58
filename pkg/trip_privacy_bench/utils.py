"""
Utility functions for Trip Privacy Bench.
"""

import hashlib
import logging
import math

import numpy as np

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbose=False, level=None):
    """Configure the root logger once for command line use."""
    if level is None:
        level = logging.DEBUG if verbose else logging.INFO
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def derive_seed(seed, *keys):
    """Derive a stable 63-bit seed from a base seed and any number of keys.

    Python's hash() is salted per process, so keys are hashed with SHA-256.
    """
    digest = hashlib.sha256(repr((int(seed),) + tuple(str(k) for k in keys)).encode("utf-8"))
    return int.from_bytes(digest.digest()[:8], "big") >> 1


def derive_rng(seed, *keys):
    """Return an independent numpy Generator for (seed, keys)."""
    return np.random.default_rng(derive_seed(seed, *keys))


def content_hash(*arrays, extra=()):
    """SHA-256 hex digest of numpy arrays plus extra string keys."""
    h = hashlib.sha256()
    for key in extra:
        h.update(str(key).encode("utf-8"))
        h.update(b"\0")
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.dtype).encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def adjust_color(color, amount, lighten=True):
    """Lighten or darken a hex color by a specified amount."""
    # Convert hex to RGB
    color = color.lstrip('#')
    r, g, b = tuple(int(color[i:i+2], 16) for i in (0, 2, 4))

    if lighten:
        r = min(255, r + amount)
        g = min(255, g + amount)
        b = min(255, b + amount)
    else:
        r = max(0, r - amount)
        g = max(0, g - amount)
        b = max(0, b - amount)

    return f"#{r:02x}{g:02x}{b:02x}"


def format_float(value):
    """Format a float for CSV/Markdown output; None and NaN become empty."""
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def parse_float(text):
    """Inverse of format_float."""
    text = str(text).strip()
    if text == "":
        return None
    return float(text)

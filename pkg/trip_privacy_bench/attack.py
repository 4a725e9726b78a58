"""
Malicious trip generation.

An adversary inflates the reward R(X) = path length of a reported trip by moving a
fraction q of its points by exactly c meters perpendicular to the local heading, with
alternating sides (zig-zag). Fabricated points must stay inside the feasibility
region, here the corpus bounding box.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import AttackRejected, ConfigError
from .trajectory import Label, path_length, project_array, unproject_array
from .utils import derive_rng

logger = logging.getLogger(__name__)


class ODMode(str, Enum):
    SAME = "same"
    SHIFTED = "shifted"


@dataclass(frozen=True)
class MaliciousIntent:
    c: float
    q: float
    od_mode: ODMode = ODMode.SAME

    def __post_init__(self):
        object.__setattr__(self, "od_mode", ODMode(self.od_mode))

    def validate(self):
        if self.c < 0:
            raise ConfigError("attack displacement c must be >= 0")
        if not 0.0 <= self.q <= 1.0:
            raise ConfigError("attack ratio q must lie in [0, 1]")
        return self

    @property
    def label(self):
        return f"c={self.c:g}m q={self.q:g} od={self.od_mode.value}"


@dataclass
class AttackOutcome:
    trajectory: object
    source_id: str
    m: int
    reward_gain: float
    clipped: bool = False
    tampered: list = field(default_factory=list)


@dataclass(frozen=True)
class AttackRecord:
    """One row of the attack manifest."""

    trip_id: str
    source_trip_id: str
    c: float
    q: float
    od_mode: str
    m: int
    reward_gain_m: float


@dataclass
class AttackInjection:
    corpus: object
    test_ids: list
    manifest: list
    rejected: list


def malicious_id(source_id):
    return f"{source_id}_mal"


def round_half_up(x):
    return int(math.floor(x + 0.5))


def select_indices(n, m, od_mode):
    """Evenly spaced tampered indices; SameOD keeps both endpoints untouched."""
    if m <= 0:
        return []
    if od_mode is ODMode.SAME:
        interior = n - 2
        m = min(m, interior)
        return [1 + int(math.floor((k + 0.5) * interior / m)) for k in range(m)]
    m = min(m, n)
    if m == 1:
        return [0]
    return sorted({int(round(v)) for v in np.linspace(0, n - 1, m)})


def perpendicular_normals(xy, indices):
    """Unit normals to the heading (previous -> next point) at each index."""
    n = len(xy)
    normals = []
    for i in indices:
        heading = xy[min(i + 1, n - 1)] - xy[max(i - 1, 0)]
        norm = math.hypot(heading[0], heading[1])
        if norm == 0.0:
            normals.append(np.array([0.0, 1.0]))
        else:
            normals.append(np.array([-heading[1], heading[0]]) / norm)
    return normals


def generate_malicious(t, intent, bbox, seed, origin=None):
    """Build the malicious counterpart of trajectory t.

    Raises AttackRejected for SameOD trips with fewer than 3 points.
    """
    intent.validate()
    n = len(t)
    if intent.od_mode is ODMode.SAME and n < 3:
        raise AttackRejected(f"Trip {t.id} has {n} points; SameOD needs at least 3")
    origin = origin or bbox.centroid
    rng = derive_rng(seed, "attack", t.id)

    m_target = round_half_up(intent.q * n)
    indices = select_indices(n, m_target, intent.od_mode)
    xy = project_array(t.coords, origin)
    coords = np.array(t.coords)
    changed = np.zeros(n, dtype=bool)

    interior = [i for i in indices if 0 < i < n - 1] if intent.od_mode is ODMode.SHIFTED else indices
    if intent.c > 0:
        for k, (i, normal) in enumerate(zip(interior, perpendicular_normals(xy, interior))):
            sign = 1.0 if k % 2 == 0 else -1.0
            displaced = xy[i] + sign * intent.c * normal
            coords[i] = unproject_array(displaced[None, :], origin)[0]
            changed[i] = True

    if intent.od_mode is ODMode.SHIFTED and indices:
        xmin, ymin, xmax, ymax = bbox.planar_extent(origin)
        # only the endpoints that were selected; m = 1 moves the origin alone
        ends = sorted({0, n - 1} & set(indices))
        draws = np.column_stack([rng.uniform(xmin, xmax, len(ends)), rng.uniform(ymin, ymax, len(ends))])
        coords[ends] = unproject_array(draws, origin)
        changed[ends] = True

    clipped_coords = bbox.clip(coords)
    clipped = not np.array_equal(clipped_coords[changed], coords[changed])
    if clipped:
        logger.debug("Trip %s: tampered points clipped to the feasibility region", t.id)
        coords[changed] = clipped_coords[changed]

    fake = t.with_coords(coords, id=malicious_id(t.id), label=Label.MALICIOUS)
    gain = path_length(fake) - path_length(t)
    return AttackOutcome(fake, t.id, len(indices), gain, clipped, list(indices))


def inject_attacks(corpus, test_ids, intent, attack_fraction, seed):
    """Add malicious counterparts for a deterministic fraction of the test trips.

    The originals stay in the corpus labeled Normal. Returns an AttackInjection with
    the enlarged corpus, the enlarged test id list and the manifest rows.
    """
    if not 0.0 < attack_fraction <= 1.0:
        raise ConfigError("attack_fraction must lie in (0, 1]")
    intent.validate()
    pool = sorted(test_ids)
    k = round_half_up(attack_fraction * len(pool))
    rng = derive_rng(seed, "attack-select")
    chosen = sorted(pool[i] for i in rng.choice(len(pool), size=k, replace=False)) if k else []

    fakes, manifest, rejected = [], [], []
    for trip_id in chosen:
        try:
            outcome = generate_malicious(corpus.get(trip_id), intent, corpus.bbox, seed,
                                         corpus.projection_origin)
        except AttackRejected as e:
            logger.warning("%s", e)
            rejected.append(trip_id)
            continue
        fakes.append(outcome.trajectory)
        manifest.append(AttackRecord(outcome.trajectory.id, trip_id, intent.c, intent.q,
                                     intent.od_mode.value, outcome.m, outcome.reward_gain))
    logger.info("Injected %d malicious trips (%s), %d rejected", len(fakes), intent.label, len(rejected))
    new_corpus = corpus.replace_trajectories(list(corpus.trajectories) + fakes)
    return AttackInjection(new_corpus, sorted(list(test_ids) + [f.id for f in fakes]), manifest, rejected)

"""Synthetic MMOG workload: hotspot world, avatar mobility, AOI bandwidth demand.

Avatars gather around circular hotspots. Objects and avatar start points are
concentrated toward hotspot centers with a Zipfian radial law; avatars then
move according to a three-state Markov chain (Halt, Exploration, Travelling).
The outgoing bandwidth of a step is the number of (entity, AOI) memberships
times the broadcast message length.
"""

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .entities import EntityDescriptor, random_attributes

HALT, EXPLORE, TRAVEL = 0, 1, 2
MODE_NAMES = ("Halt", "Exploration", "Travelling")

# Rows: current mode H, E, T; columns: next mode H, E, T.
DEFAULT_TRANSITIONS = (
    (0.85, 0.10, 0.05),
    (0.15, 0.80, 0.05),
    (0.05, 0.00, 0.95),
)


class WorkloadError(ValueError):
    pass


@dataclass
class WorldConfig:
    width: float = 5000.0
    height: float = 5000.0
    H_num: int = 5
    p_hot: float = 0.3
    p_den: float = 0.8
    p_obj: float = 0.7
    O_num: int = 1000
    P_max: int = 1000
    lam: float = 200.0
    M_len: int = 100
    delta_t: float = 0.2
    aoi_radius: float = 100.0
    speed: float = 5.0
    explore_radius: float = 50.0
    explore_exponent: float = 1.4
    transitions: tuple = DEFAULT_TRANSITIONS
    # "seasonal" follows player_count(t); "constant" keeps P_max players online.
    population: str = "seasonal"
    seed: int = 0

    def validate(self):
        for name in ("p_hot", "p_den", "p_obj"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise WorkloadError(f"{name} must be in [0, 1], got {value}")
        for name in ("H_num", "O_num", "P_max", "M_len"):
            if getattr(self, name) < 0:
                raise WorkloadError(f"{name} must be >= 0")
        if self.width <= 0 or self.height <= 0:
            raise WorkloadError("world size must be positive")
        if self.delta_t <= 0:
            raise WorkloadError("delta_t must be > 0")
        if self.lam <= 0:
            raise WorkloadError("lambda must be > 0")
        if self.aoi_radius <= 0:
            raise WorkloadError("aoi_radius must be > 0")
        if self.population not in ("seasonal", "constant"):
            raise WorkloadError(f"unknown population mode {self.population!r}")
        m = np.asarray(self.transitions, dtype=float)
        if m.shape != (3, 3) or (m < 0).any() or not np.allclose(m.sum(axis=1), 1.0):
            raise WorkloadError("transition matrix must be 3x3 with rows summing to 1")
        return self

    def with_overrides(self, **kw):
        return replace(self, **kw)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Hotspot:
    center: tuple
    radius: float

    def contains(self, point):
        return math.dist(self.center, point) <= self.radius


@dataclass
class AvatarState:
    id: int
    position: tuple
    mode: int = HALT
    travel_target: Optional[tuple] = None
    speed: float = 5.0


@dataclass
class LoadSample:
    step: int
    per_entity_aoi_count: dict = field(default_factory=dict)
    total_bandwidth: int = 0


# ---------------------------------------------------------------------------
# players over time


def player_count(t, lam, P_max):
    """Players online at step t: |sin(pi t / lam)| * P_max, rounded half up."""
    if t < 0:
        raise WorkloadError("t must be >= 0")
    return int(math.floor(abs(math.sin(math.pi * t / lam)) * P_max + 0.5))


# ---------------------------------------------------------------------------
# placement


def hotspot_radius(config):
    if config.H_num == 0 or config.p_hot == 0:
        return 0.0
    return math.sqrt(config.p_hot * config.width * config.height / (config.H_num * math.pi))


def place_hotspots(config, rng):
    r = hotspot_radius(config)
    if r == 0.0:
        return []
    if 2 * r > min(config.width, config.height):
        raise WorkloadError(
            f"p_hot={config.p_hot} with H_num={config.H_num} needs radius {r:.1f}, "
            "which does not fit inside the world"
        )
    hotspots = []
    for _ in range(config.H_num):
        # prefer disjoint disks; fall back to the last draw if the world is crowded
        for _attempt in range(1000):
            c = (rng.uniform(r, config.width - r), rng.uniform(r, config.height - r))
            if all(math.dist(c, h.center) >= 2 * r for h in hotspots):
                break
        hotspots.append(Hotspot(center=(float(c[0]), float(c[1])), radius=r))
    return hotspots


def zipf_radii(rng, n, radius):
    """Radial offsets: integer bin k in 1..ceil(radius) drawn with P(k) ~ 1/k."""
    bins = max(1, math.ceil(radius))
    ranks = np.arange(1, bins + 1)
    cdf = np.cumsum(1.0 / ranks)
    cdf /= cdf[-1]
    k = np.searchsorted(cdf, rng.random(n), side="right")
    k = np.minimum(k, bins - 1)
    return (k + rng.random(n)) * (radius / bins)


def points_in_hotspots(rng, n, hotspots):
    if n == 0:
        return np.zeros((0, 2))
    centers = np.array([h.center for h in hotspots])
    radii = np.array([h.radius for h in hotspots])
    which = rng.integers(0, len(hotspots), size=n)
    rad = np.empty(n)
    for i, h in enumerate(hotspots):
        sel = which == i
        rad[sel] = zipf_radii(rng, int(sel.sum()), h.radius)
    theta = rng.uniform(0.0, 2 * math.pi, size=n)
    pts = centers[which] + np.column_stack((rad * np.cos(theta), rad * np.sin(theta)))
    # Bin edges are exact; guard against floating error at the rim.
    d = np.linalg.norm(pts - centers[which], axis=1)
    over = d > radii[which]
    pts[over] = centers[which][over] + (pts[over] - centers[which][over]) * (radii[which][over] / d[over])[:, None]
    return pts


def uniform_points(rng, n, config):
    return np.column_stack((rng.uniform(0, config.width, n), rng.uniform(0, config.height, n)))


def inside_any(points, hotspots):
    if not hotspots or len(points) == 0:
        return np.zeros(len(points), dtype=bool)
    centers = np.array([h.center for h in hotspots])
    radii = np.array([h.radius for h in hotspots])
    d = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
    return (d <= radii[None, :]).any(axis=1)


def outland_points(rng, n, config, hotspots):
    out = np.zeros((0, 2))
    for _ in range(1000):
        if len(out) >= n:
            break
        batch = uniform_points(rng, max(2 * (n - len(out)), 16), config)
        out = np.vstack((out, batch[~inside_any(batch, hotspots)]))
    if len(out) < n:
        raise WorkloadError("outland too small to place the remaining objects")
    return out[:n]


def avatar_start_points(rng, n, config, hotspots):
    """p_den of the avatars start in a hotspot, the rest anywhere on the map."""
    pts = uniform_points(rng, n, config)
    if hotspots and n:
        hot = rng.random(n) < config.p_den
        pts[hot] = points_in_hotspots(rng, int(hot.sum()), hotspots)
    return pts


def init_world(config, rng, n_avatars=None, first_avatar_uid=None):
    """Place hotspots, objects and the initial avatars (all halted).

    Returns ``(hotspots, objects, avatars)``. Objects are ``EntityDescriptor``
    records with uids ``0..O_num-1``; avatar ids continue from there.
    """
    config.validate()
    hotspots = place_hotspots(config, rng)
    n_hot = math.floor(config.p_obj * config.O_num) if hotspots else 0
    obj_xy = np.vstack((
        points_in_hotspots(rng, n_hot, hotspots) if n_hot else np.zeros((0, 2)),
        outland_points(rng, config.O_num - n_hot, config, hotspots) if hotspots else uniform_points(rng, config.O_num, config),
    ))
    objects = [
        EntityDescriptor(uid=i, position=(float(x), float(y)), attributes=random_attributes(rng))
        for i, (x, y) in enumerate(obj_xy)
    ]
    if n_avatars is None:
        n_avatars = config.P_max
    base = config.O_num if first_avatar_uid is None else first_avatar_uid
    av_xy = avatar_start_points(rng, n_avatars, config, hotspots)
    avatars = [
        AvatarState(id=base + i, position=(float(x), float(y)), mode=HALT, speed=config.speed)
        for i, (x, y) in enumerate(av_xy)
    ]
    return hotspots, objects, avatars


# ---------------------------------------------------------------------------
# mobility


def transition_matrix(config):
    return np.asarray(config.transitions, dtype=float)


def _hotspot_arrays(hotspots):
    if not hotspots:
        return np.zeros((0, 2)), np.zeros(0)
    return np.array([h.center for h in hotspots]), np.array([h.radius for h in hotspots])


def advance(pos, mode, target, hotspots, transitions, rng, config):
    """Move every avatar one step. Arrays are not modified in place.

    ``target`` rows are NaN when no travel target is set.
    """
    n = len(pos)
    pos = pos.copy()
    target = target.copy()
    if n == 0:
        return pos, mode.copy(), target
    cum = np.cumsum(np.asarray(transitions, dtype=float), axis=1)
    u = rng.random(n)
    new_mode = (u[:, None] >= cum[mode]).sum(axis=1)
    new_mode = np.minimum(new_mode, 2)

    # leaving Travelling drops the target
    target[new_mode != TRAVEL] = np.nan

    exp_idx = np.flatnonzero(new_mode == EXPLORE)
    if len(exp_idx):
        centers, radii = _hotspot_arrays(hotspots)
        if len(centers):
            d = np.linalg.norm(pos[exp_idx, None, :] - centers[None], axis=2)
            in_hot = (d <= radii[None]).any(axis=1)
        else:
            in_hot = np.zeros(len(exp_idx), dtype=bool)
        v = rng.random(len(exp_idx))
        theta = rng.uniform(0.0, 2 * math.pi, len(exp_idx))
        a = config.explore_exponent
        power = np.minimum((1.0 - v) ** (-1.0 / (a - 1.0)), config.explore_radius)
        uniform = config.explore_radius * np.sqrt(v)
        step = np.where(in_hot, power, uniform)
        pos[exp_idx] += np.column_stack((step * np.cos(theta), step * np.sin(theta)))

    trav = new_mode == TRAVEL
    need = np.flatnonzero(trav & np.isnan(target[:, 0]))
    if len(need):
        target[need] = avatar_start_points(rng, len(need), config, hotspots)
    trav_idx = np.flatnonzero(trav)
    if len(trav_idx):
        delta = target[trav_idx] - pos[trav_idx]
        dist = np.linalg.norm(delta, axis=1)
        arrive = dist <= config.speed
        moving = ~arrive
        safe = np.where(dist > 0, dist, 1.0)
        pos[trav_idx[moving]] += delta[moving] * (config.speed / safe[moving])[:, None]
        done = trav_idx[arrive]
        pos[done] = target[done]
        target[done] = np.nan
        new_mode[done] = HALT

    np.clip(pos[:, 0], 0.0, config.width, out=pos[:, 0])
    np.clip(pos[:, 1], 0.0, config.height, out=pos[:, 1])
    return pos, new_mode, target


def step_mobility(avatar, hotspots, transition_matrix, rng, config=None):
    """Advance a single avatar one step; returns a new ``AvatarState``."""
    config = config or WorldConfig(speed=avatar.speed)
    if config.speed != avatar.speed:
        config = replace(config, speed=avatar.speed)
    tgt = avatar.travel_target if avatar.travel_target is not None else (np.nan, np.nan)
    pos, mode, target = advance(
        np.array([avatar.position], dtype=float),
        np.array([avatar.mode]),
        np.array([tgt], dtype=float),
        hotspots, transition_matrix, rng, config,
    )
    m = int(mode[0])
    return AvatarState(
        id=avatar.id,
        position=(float(pos[0, 0]), float(pos[0, 1])),
        mode=m,
        travel_target=(float(target[0, 0]), float(target[0, 1])) if m == TRAVEL else None,
        speed=avatar.speed,
    )


class Population:
    """Array-backed avatar set used by the simulator."""

    def __init__(self, avatars, next_uid):
        self.ids = np.array([a.id for a in avatars], dtype=np.int64)
        self.pos = np.array([a.position for a in avatars], dtype=float).reshape(-1, 2)
        self.mode = np.array([a.mode for a in avatars], dtype=np.int64)
        self.target = np.array(
            [a.travel_target if a.travel_target is not None else (np.nan, np.nan) for a in avatars], dtype=float
        ).reshape(-1, 2)
        self.next_uid = next_uid

    def __len__(self):
        return len(self.ids)

    def avatars(self, speed=5.0):
        out = []
        for i in range(len(self.ids)):
            tgt = None if np.isnan(self.target[i, 0]) else (float(self.target[i, 0]), float(self.target[i, 1]))
            out.append(AvatarState(int(self.ids[i]), (float(self.pos[i, 0]), float(self.pos[i, 1])), int(self.mode[i]), tgt, speed))
        return out

    def step(self, hotspots, transitions, rng, config):
        self.pos, self.mode, self.target = advance(self.pos, self.mode, self.target, hotspots, transitions, rng, config)

    def resize(self, count, rng, config, hotspots):
        """Join new avatars with the start rule, or drop uniformly random ones.

        Returns ``(joined_ids, left_ids)``.
        """
        n = len(self.ids)
        if count > n:
            k = count - n
            new_ids = np.arange(self.next_uid, self.next_uid + k, dtype=np.int64)
            self.next_uid += k
            self.ids = np.concatenate((self.ids, new_ids))
            self.pos = np.vstack((self.pos, avatar_start_points(rng, k, config, hotspots)))
            self.mode = np.concatenate((self.mode, np.full(k, HALT, dtype=np.int64)))
            self.target = np.vstack((self.target, np.full((k, 2), np.nan)))
            return new_ids, np.zeros(0, dtype=np.int64)
        if count < n:
            leave = rng.choice(n, size=n - count, replace=False)
            keep = np.ones(n, dtype=bool)
            keep[leave] = False
            left = self.ids[~keep]
            self.ids, self.pos, self.mode, self.target = self.ids[keep], self.pos[keep], self.mode[keep], self.target[keep]
            return np.zeros(0, dtype=np.int64), left
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# load


def aoi_counts(entity_xy, avatar_xy, radius):
    """Number of avatar AOI disks (closed) containing each entity position."""
    entity_xy = np.asarray(entity_xy, dtype=float).reshape(-1, 2)
    avatar_xy = np.asarray(avatar_xy, dtype=float).reshape(-1, 2)
    if len(avatar_xy) == 0 or len(entity_xy) == 0:
        return np.zeros(len(entity_xy), dtype=np.int64)
    tree = cKDTree(avatar_xy)
    return np.asarray(tree.query_ball_point(entity_xy, radius, return_length=True), dtype=np.int64)


def compute_load(objects, avatars, aoi_radius, M_len, t):
    """Per-entity AOI membership and the step's broadcast bandwidth.

    Entities are the objects followed by the avatars themselves; an avatar's
    own AOI counts toward its own entity.
    """
    uids = [o.uid for o in objects] + [a.id for a in avatars]
    xy = [o.position for o in objects] + [a.position for a in avatars]
    counts = aoi_counts(xy, [a.position for a in avatars], aoi_radius)
    per_entity = {int(u): int(c) for u, c in zip(uids, counts)}
    return LoadSample(step=t, per_entity_aoi_count=per_entity, total_bandwidth=int(counts.sum()) * M_len)


# ---------------------------------------------------------------------------
# clients per entity

CLIENT_K = 0.5
CLIENT_ALPHA = 1.4


def client_count_pmf(p_max=1000, alpha=CLIENT_ALPHA):
    """Support 1..p_max with P(x) proportional to x**-alpha."""
    support = np.arange(1, max(1, p_max) + 1)
    w = support.astype(float) ** -alpha
    return support, w / w.sum()


def sample_client_counts(rng, size, p_max=1000, alpha=CLIENT_ALPHA):
    support, pmf = client_count_pmf(p_max, alpha)
    cdf = np.cumsum(pmf)
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return support[np.minimum(idx, len(support) - 1)]


def sample_client_count(rng, p_max=1000, alpha=CLIENT_ALPHA):
    return int(sample_client_counts(rng, 1, p_max, alpha)[0])

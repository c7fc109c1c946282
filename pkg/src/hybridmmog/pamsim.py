"""Peer-level simulation of the positional action manager.

One overlay (gossip views) is simulated per run; it does not depend on how
often the server speaks, so several server periods are tracked side by side
on the same overlay and mobility trace. Each track keeps every client's
replica as dense arrays (client x entity) of known position and timestamp.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import pam, workload
from .pam import PeerState, PeerView


@dataclass
class PamConfig:
    n_peers: int = 500
    d: int = 10
    grid_resolution: int = 32
    heuristic: str = "greedy"
    stale_threshold: int = 20
    random_size: int = 20
    random_every: int = 4
    mix: int = 0
    T_s: tuple = (1.0,)
    overlay: bool = True
    server_only: bool = True
    steps: int = 160
    warmup: int = 40
    burn_in: int = 100      # mobility-only steps before the overlay starts
    ac_every: int = 10
    ac_exact_limit: int = 2000
    record_bytes: int = pam.RECORD_BYTES
    header_bytes: int = pam.MESSAGE_HEADER_BYTES

    def validate(self):
        if self.n_peers < 1 or self.d < 0 or self.grid_resolution < 1:
            raise ValueError("need n_peers >= 1, d >= 0, grid_resolution >= 1")
        if self.heuristic not in ("greedy", "score"):
            raise ValueError(f"unknown heuristic {self.heuristic!r}")
        if any(t <= 0 for t in self.T_s):
            raise ValueError("T_s values must be > 0")
        if self.steps < 0 or self.warmup < 0 or self.burn_in < 0:
            raise ValueError("steps, warmup and burn_in must be >= 0")
        return self


@dataclass
class Track:
    T_s: float
    overlay: bool
    kx: np.ndarray
    ky: np.ndarray
    kt: np.ndarray          # time of the latest knowledge, -inf if none
    kin: np.ndarray         # entity currently held in the replica
    jc_sum: float = 0.0
    jc_n: int = 0
    server_bytes: float = 0.0

    @property
    def name(self):
        return f"{'overlay' if self.overlay else 'server'}@{self.T_s:g}"

    @property
    def mean_jc(self):
        return self.jc_sum / self.jc_n if self.jc_n else float("nan")


@dataclass
class PamResult:
    tracks: dict
    ac_values: list = field(default_factory=list)
    ac_exact: int = 0
    ac_approx: int = 0
    steps: list = field(default_factory=list)   # per-step rows

    @property
    def mean_ac(self):
        return float(np.mean(self.ac_values)) if self.ac_values else float("nan")


class PamSimulation:
    def __init__(self, world, cfg, rng):
        self.world = replace(world, P_max=cfg.n_peers, population="constant").validate()
        self.cfg = cfg.validate()
        self.rng = rng
        self.hotspots, objects, avatars = workload.init_world(self.world, rng)
        self.obj_xy = np.array([o.position for o in objects], dtype=float).reshape(-1, 2)
        self.pop = workload.Population(avatars, self.world.O_num + len(avatars))
        self.transitions = workload.transition_matrix(self.world)
        # avatars start crowded in hotspots; let the mobility model settle first
        for _ in range(cfg.burn_in):
            self.pop.step(self.hotspots, self.transitions, rng, self.world)
        self.n_obj = len(self.obj_xy)
        self.radius = self.world.aoi_radius
        self.dt = self.world.delta_t
        self.layout = pam.tile_layout(self.radius, cfg.grid_resolution)
        n = cfg.n_peers
        self.phase = rng.random(n)  # fraction of T_s
        self.peers = {}
        for i in range(n):
            view = PeerView(d=cfg.d, random_size=cfg.random_size, stale_threshold=cfg.stale_threshold)
            self.peers[i] = PeerState(i, tuple(self.pop.pos[i]), self.radius, view)
        for i in range(n):
            others = rng.choice(n - 1, size=min(cfg.random_size, n - 1), replace=False) if n > 1 else []
            for j in others:
                j = int(j) + (int(j) >= i)
                self.peers[i].view.random_layer[j] = pam.PeerDescriptor(j, tuple(self.pop.pos[j]), 0)
        e = self.n_obj + n
        self.tracks = {}
        for T in cfg.T_s:
            flags = ([True] if cfg.overlay else []) + ([False] if cfg.server_only else [])
            for ov in flags:
                tr = Track(T, ov, np.zeros((n, e), np.float32), np.zeros((n, e), np.float32),
                           np.full((n, e), -np.inf, np.float32), np.zeros((n, e), dtype=bool))
                self.tracks[tr.name] = tr
        self.step_no = 0
        self._gossip_seen = 0
        self.result = PamResult(tracks=self.tracks)

    # -- helpers ------------------------------------------------------------

    def entity_xy(self):
        return np.vstack((self.obj_xy, self.pop.pos))

    def truth(self, ent):
        """Boolean (peers, entities): entity inside the peer's AOI (self excluded)."""
        n = self.cfg.n_peers
        inside = np.zeros((n, len(ent)), dtype=bool)
        tree = cKDTree(ent)
        for i, idx in enumerate(tree.query_ball_point(self.pop.pos, self.radius)):
            inside[i, idx] = True
        inside[np.arange(n), self.n_obj + np.arange(n)] = False
        return inside

    def neighbor_matrix(self):
        n, d = self.cfg.n_peers, max(self.cfg.d, 1)
        nb = np.full((n, d), -1, dtype=np.int64)
        for i, st in self.peers.items():
            ids = sorted(st.view.coverage_layer)[:d]
            nb[i, :len(ids)] = ids
        return nb

    # -- one step -------------------------------------------------------------

    def step(self, record=True):
        cfg = self.cfg
        it = self.step_no
        now = it * self.dt
        self.pop.step(self.hotspots, self.transitions, self.rng, self.world)
        for i, st in self.peers.items():
            st.position = (float(self.pop.pos[i, 0]), float(self.pop.pos[i, 1]))
        if cfg.overlay:
            for i in range(cfg.n_peers):
                pam.gossip_cycle(self.peers[i], self.peers, it, self.rng, cfg.heuristic, cfg.grid_resolution, cfg.random_every, self.layout, cfg.mix)
            # querying a neighbour also refreshes its descriptor
            for st in self.peers.values():
                for j in st.view.coverage_layer:
                    st.view.coverage_layer[j] = pam.PeerDescriptor(j, self.peers[j].position, it)
        ent = self.entity_xy()
        inside = self.truth(ent)
        nb = self.neighbor_matrix() if cfg.overlay else None
        gossip = sum(st.messages for st in self.peers.values())
        queries = 2 * int((nb >= 0).sum()) if nb is not None else 0
        row = {"step": it, "overlay_msgs": gossip - self._gossip_seen + queries, "tracks": {}}
        self._gossip_seen = gossip
        for tr in self.tracks.values():
            row["tracks"][tr.name] = self._step_track(tr, ent, inside, nb, now, record)
        row["mean_ac"] = float("nan")
        if record and cfg.ac_every and it % cfg.ac_every == 0 and cfg.overlay:
            row["mean_ac"] = self._sample_ac()
        self.step_no += 1
        return row

    def _step_track(self, tr, ent, inside, nb, now, record):
        """Advance one track; returns (mean JC this step, server bytes this step)."""
        cfg = self.cfg
        n = cfg.n_peers
        selves = self.n_obj + np.arange(n)
        ex, ey = ent[:, 0].astype(np.float32), ent[:, 1].astype(np.float32)
        # every client always knows itself
        rows_all = np.arange(n)
        tr.kx[rows_all, selves] = self.pop.pos[:, 0]
        tr.ky[rows_all, selves] = self.pop.pos[:, 1]
        tr.kt[rows_all, selves] = now
        tr.kin[rows_all, selves] = True
        px = self.pop.pos[:, 0:1].astype(np.float32)
        py = self.pop.pos[:, 1:2].astype(np.float32)
        r2 = np.float32(self.radius * self.radius)

        if tr.overlay and nb is not None:
            self._import(tr, nb, px, py, r2, selves)

        sent = 0.0
        due = pam.updates_due(now, self.dt, tr.T_s, self.phase * tr.T_s)
        if due.any():
            rows = np.flatnonzero(due)
            sub = inside[rows]
            # the server's list is authoritative: absent entities are known to be out
            tr.kt[rows] = np.float32(now)
            tr.kin[rows] = sub
            tr.kx[rows] = np.where(sub, ex, tr.kx[rows])
            tr.ky[rows] = np.where(sub, ey, tr.ky[rows])
            tr.kin[rows, selves[rows]] = True
            tr.kx[rows, selves[rows]] = self.pop.pos[rows, 0]
            tr.ky[rows, selves[rows]] = self.pop.pos[rows, 1]
            sent = float(cfg.header_bytes * len(rows) + cfg.record_bytes * sub.sum())
            if record:
                tr.server_bytes += sent

        # drop entries whose known position is outside the AOI (the time stays)
        out = tr.kin & ((tr.kx - px) ** 2 + (tr.ky - py) ** 2 > r2)
        tr.kin &= ~out
        known = tr.kin.copy()
        known[rows_all, selves] = False

        if not record:
            return float("nan"), sent
        both = known & inside
        bp, be = np.nonzero(both)
        err = np.hypot(tr.kx[bp, be] - ex[be], tr.ky[bp, be] - ey[be])
        terms = np.bincount(bp, weights=np.maximum(0.0, 1.0 - err / (2 * self.radius)), minlength=n)
        union = (known | inside).sum(axis=1)
        jcs = np.where(union > 0, terms / np.maximum(union, 1), 1.0)
        tr.jc_sum += float(jcs.sum())
        tr.jc_n += n
        return float(jcs.mean()), sent

    def _import(self, tr, nb, px, py, r2, selves):
        """Overlay query: take neighbours' fresher records that fall inside the AOI.

        Works on the (client, neighbour, entity) triples that actually exist,
        i.e. the entries each neighbour holds, so cost follows replica size.
        """
        n, n_ent = tr.kt.shape
        kt, kx, ky = tr.kt.ravel(), tr.kx.ravel(), tr.ky.ravel()
        held = np.flatnonzero(tr.kin.ravel())
        cnt = np.bincount(held // n_ent, minlength=n)
        start = np.cumsum(cnt) - cnt
        p_slot = np.repeat(np.arange(n), nb.shape[1])
        q_slot = nb.ravel()
        ok = q_slot >= 0
        p_slot, q_slot = p_slot[ok], q_slot[ok]
        lens = cnt[q_slot]
        total = int(lens.sum())
        if total == 0:
            return
        offs = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
        src = held[np.repeat(start[q_slot], lens) + offs]
        p = np.repeat(p_slot, lens)
        e = src % n_ent
        x = kx[src]
        y = ky[src]
        keep = (x - px[p, 0]) ** 2 + (y - py[p, 0]) ** 2 <= r2
        src, p, e = src[keep], p[keep], e[keep]
        dst = p * n_ent + e
        t = kt[src]
        keep = (t > kt[dst]) & (e != selves[p])
        src, dst, t = src[keep], dst[keep], t[keep]
        if len(dst) == 0:
            return
        # freshest record per (client, entity)
        order = np.argsort(dst.astype(np.float64) * 1e6 + t, kind="stable")
        dst, src = dst[order], src[order]
        last = np.ones(len(dst), dtype=bool)
        last[:-1] = dst[1:] != dst[:-1]
        dst, src = dst[last], src[last]
        kx[dst] = kx[src]
        ky[dst] = ky[src]
        kt[dst] = kt[src]
        tr.kin.ravel()[dst] = True

    def _sample_ac(self):
        """AC of every peer's current view; appends to the result, returns the mean."""
        res = self.result
        start = len(res.ac_values)
        pos = self.pop.pos
        tree = cKDTree(pos)
        for i, idx in enumerate(tree.query_ball_point(pos, 2 * self.radius)):
            p = pam.Aoi(tuple(pos[i]), self.radius, i)
            others = [pam.Aoi(tuple(pos[j]), self.radius, j) for j in idx if j != i]
            view = [pam.Aoi(tuple(pos[j]), self.radius, j) for j in sorted(self.peers[i].view.coverage_layer)]
            value, exact = pam.ac(p, view, others, self.cfg.grid_resolution, self.cfg.d, self.cfg.ac_exact_limit)
            res.ac_values.append(value)
            if exact:
                res.ac_exact += 1
            else:
                res.ac_approx += 1
        return float(np.mean(res.ac_values[start:]))

    def run(self):
        for s in range(self.cfg.steps):
            row = self.step(record=s >= self.cfg.warmup)
            if s >= self.cfg.warmup:
                self.result.steps.append(row)
        for tr in self.tracks.values():
            recorded = max(self.cfg.steps - self.cfg.warmup, 0) * self.dt
            tr.server_rate = tr.server_bytes / recorded if recorded > 0 else 0.0
        return self.result


def run_pam(world, cfg, seed):
    return PamSimulation(world, cfg, np.random.default_rng(seed)).run()

"""End-to-end experiments: clock, seeded sub-streams, SAM and PAM loops, metrics."""

import csv
import hashlib
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import pamsim, vsdht, workload
from .entities import EntityDescriptor, random_attributes
from .sam import ManagerConfig, ManagerError, SamSystem, risk
from .vsdht import Clock

log = logging.getLogger(__name__)

SUBSYSTEMS = ("sam", "pam", "both")
STREAMS = ("workload", "sam", "failures", "pam", "pam_workload")

METRIC_FIELDS = (
    "step", "players", "cost_per_minute", "gamma_r", "availability", "overloaded_nodes",
    "migrations", "mean_jc", "mean_ac", "server_bytes_per_s", "cloud_nodes",
)
PAM_FIELDS = ("step", "track", "T_s", "mode", "mean_jc", "mean_ac", "server_bytes", "overlay_msgs")


class ConfigError(ValueError):
    """Invalid simulation configuration (reported before step 0)."""


@dataclass
class SimConfig:
    world: workload.WorldConfig = field(default_factory=workload.WorldConfig)
    manager: ManagerConfig = field(default_factory=ManagerConfig)
    pam: pamsim.PamConfig = field(default_factory=pamsim.PamConfig)
    pam_world: Optional[workload.WorldConfig] = None
    vs_count: int = 100
    n_peers: Optional[int] = None     # None -> peer_ratio * P_max
    peer_ratio: float = 0.02
    steps: int = 400
    step_seconds: float = 60.0        # simulated seconds one SAM step stands for
    window_steps: int = 1             # steps per metrics row
    request_prob: float = 0.1
    rtt_file: Optional[str] = None
    seed: int = 0
    subsystems: str = "sam"
    out_dir: Optional[str] = None

    def validate(self):
        try:
            self.world.validate()
            self.manager.validate()
            self.pam.validate()
            if self.pam_world is not None:
                self.pam_world.validate()
        except (ValueError, ManagerError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.subsystems not in SUBSYSTEMS:
            raise ConfigError(f"subsystems must be one of {SUBSYSTEMS}")
        if self.subsystems in ("sam", "both") and self.vs_count < 1:
            raise ConfigError("vs_count must be >= 1 when SAM is enabled")
        if self.steps < 0 or self.window_steps < 1 or self.step_seconds <= 0:
            raise ConfigError("need steps >= 0, window_steps >= 1, step_seconds > 0")
        if not 0.0 <= self.request_prob <= 1.0:
            raise ConfigError("request_prob must be in [0, 1]")
        if self.peers() < 0:
            raise ConfigError("peer pool size must be >= 0")
        if self.rtt_file is not None and not os.path.exists(self.rtt_file):
            raise ConfigError(f"RTT file not found: {self.rtt_file}")
        return self

    def peers(self):
        if self.n_peers is not None:
            return self.n_peers
        return int(round(self.peer_ratio * self.world.P_max))


@dataclass
class MetricsRow:
    step: int
    players: int = 0
    cost_per_minute: float = 0.0
    gamma_r: float = 0.0
    availability: float = 1.0
    overloaded_nodes: int = 0
    migrations: int = 0
    mean_jc: float = float("nan")
    mean_ac: float = float("nan")
    server_bytes_per_s: float = 0.0
    cloud_nodes: int = 0

    def __post_init__(self):
        if not 0.0 <= self.availability <= 1.0:
            raise ValueError("availability must be in [0, 1]")


@dataclass
class RunResult:
    rows: list
    summary: dict
    migrations: list = field(default_factory=list)
    pam_rows: list = field(default_factory=list)   # per-step dicts from the overlay simulation
    pam_tracks: dict = field(default_factory=dict)  # track name -> summary after warm-up


def streams(seed):
    """Independent named generators derived from the master seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


# ---------------------------------------------------------------------------
# SAM loop


class SamRun:
    def __init__(self, cfg, rngs):
        self.cfg = cfg
        self.world = cfg.world
        self.rng_w = rngs["workload"]
        self.rng_s = rngs["sam"]
        self.rng_f = rngs["failures"]
        mcfg = cfg.manager
        self.dht = vsdht.Dht(cfg.vs_count)
        rtt = vsdht.RttModel.from_file(cfg.rtt_file) if cfg.rtt_file else vsdht.RttModel()
        self.system = SamSystem(mcfg, self.dht, cfg.peers(), self.rng_s, rtt, cfg.step_seconds)
        n0 = self.initial_players()
        self.hotspots, objects, avatars = workload.init_world(self.world, self.rng_w, n_avatars=n0)
        self.obj_xy = np.array([o.position for o in objects], dtype=float).reshape(-1, 2)
        self.vs_index = {vs.vs_id: i for i, vs in enumerate(self.dht.vss)}
        self.obj_vs = np.array([self.vs_index[self.dht.insert(o.uid, o.dht_id).vs_id] for o in objects], dtype=np.int64)
        self.pop = workload.Population(avatars, self.world.O_num + len(avatars))
        self.avatar_vs = {}
        for a in avatars:
            self._insert_avatar(a.id, a.position)
        self.transitions = workload.transition_matrix(self.world)
        self.clock = Clock(0, cfg.step_seconds)
        self.migrations_window = 0

    def initial_players(self):
        if self.world.population == "constant":
            return self.world.P_max
        return workload.player_count(0, self.world.lam, self.world.P_max)

    def players_at(self, t):
        if self.world.population == "constant":
            return self.world.P_max
        return workload.player_count(t, self.world.lam, self.world.P_max)

    def _insert_avatar(self, uid, position):
        desc = EntityDescriptor(uid=int(uid), position=(float(position[0]), float(position[1])),
                                attributes=random_attributes(self.rng_w), has_think=False)
        vs = self.dht.insert(desc.uid, desc.dht_id)
        self.avatar_vs[int(uid)] = self.vs_index[vs.vs_id]

    def step(self, t):
        cfg = self.cfg
        sysm = self.system
        self.clock.step = t
        joined, left = self.pop.resize(self.players_at(t), self.rng_w, self.world, self.hotspots)
        for uid in left:
            self.dht.remove(int(uid))
            del self.avatar_vs[int(uid)]
        for uid in joined:
            i = int(np.flatnonzero(self.pop.ids == uid)[0])
            self._insert_avatar(uid, self.pop.pos[i])
        self.pop.step(self.hotspots, self.transitions, self.rng_w, self.world)
        if len(self.pop) != self.players_at(t):
            raise AssertionError("player count does not match the seasonal curve")

        migrations = 0
        if t % cfg.manager.epoch_steps == 0:
            self._failures()
            stats = sysm.run_epoch(self.clock)
            migrations = stats.migrations
            sysm.check_totality()

        # client requests against the entities in their AOI
        ent_xy = np.vstack((self.obj_xy, self.pop.pos)) if len(self.pop) else self.obj_xy
        ent_vs = np.concatenate((self.obj_vs, np.array([self.avatar_vs[int(u)] for u in self.pop.ids], dtype=np.int64)))
        watchers = workload.aoi_counts(ent_xy, self.pop.pos, self.world.aoi_radius)
        requests = self.rng_s.binomial(watchers, cfg.request_prob)
        per_vs_req = np.bincount(ent_vs, weights=requests, minlength=cfg.vs_count)
        # an entity touched by at least one action has its new state broadcast to every watcher
        sent = np.where(requests > 0, watchers, 0)
        per_vs_load = np.bincount(ent_vs, weights=sent, minlength=cfg.vs_count) * self.world.M_len / self.world.delta_t
        loads = {vs.vs_id: float(per_vs_load[i]) for i, vs in enumerate(self.dht.vss)}

        node_load = sysm.node_loads(loads)
        overloaded = {n for n, load in node_load.items() if load >= sysm.nodes[n].n_cap}
        t0 = self.clock.now
        t1 = t0 + cfg.step_seconds
        lost = 0.0
        for i, vs in enumerate(self.dht.vss):
            r = per_vs_req[i]
            if vs.host in overloaded:
                lost += r
            else:
                lost += r * vsdht.inaccessible_fraction(vs, t0, t1)
        total_req = float(per_vs_req.sum())
        availability = 1.0 - lost / total_req if total_req > 0 else 1.0

        # cost of this step, scaled to one minute
        rent_share = cfg.step_seconds / sysm.epoch_seconds
        band = sum(loads[vs.vs_id] * cfg.step_seconds * sysm.nodes[vs.host].n_bcost for vs in self.dht.vss)
        rent = sum(n.n_rcost * rent_share for n in sysm.nodes.values())
        cost_per_minute = (band + rent) * 60.0 / cfg.step_seconds
        vs_objects = {vs.vs_id: len(vs.entities) for vs in self.dht.vss}
        report = risk(sysm.assignment(), sysm.nodes, vs_objects, f_peer=cfg.manager.peer_fprob)

        sysm.observe(loads, self.world.delta_t)
        return MetricsRow(
            step=t, players=len(self.pop), cost_per_minute=cost_per_minute, gamma_r=report.gamma_r,
            availability=availability, overloaded_nodes=len(overloaded), migrations=migrations,
            cloud_nodes=len(sysm.clouds()),
        )

    def _failures(self):
        # failures come from their own stream so toggling them leaves the rest intact
        sysm = self.system
        saved = sysm.rng
        sysm.rng = self.rng_f
        try:
            sysm.fail_peers(self.clock)
        finally:
            sysm.rng = saved


# ---------------------------------------------------------------------------
# PAM loop


class PamRun:
    def __init__(self, cfg, rngs):
        world = cfg.pam_world or cfg.world
        pcfg = replace(cfg.pam, steps=cfg.steps)
        self.warmup = pcfg.warmup
        self.sim = pamsim.PamSimulation(world, pcfg, rngs["pam"])
        self.dt = self.sim.dt
        self.first = next(iter(self.sim.tracks), None)
        self.rows = []

    def step(self, t):
        """Advance the overlay one step; returns (JC, AC, server bytes/s) of the first track.

        JC and AC are NaN during the warm-up steps.
        """
        row = self.sim.step(record=t >= self.warmup)
        self.rows.append(row)
        if self.first is None:
            return float("nan"), row["mean_ac"], 0.0
        jc, sent = row["tracks"][self.first]
        return jc, row["mean_ac"], sent / self.dt

    def track_summary(self):
        """Per track: mean JC, mean AC and server bytes/s over the recorded steps."""
        rec = self.rows[self.warmup:]
        acs = [r["mean_ac"] for r in rec if not math.isnan(r["mean_ac"])]
        out = {}
        for name, tr in self.sim.tracks.items():
            jcs = [r["tracks"][name][0] for r in rec]
            sent = [r["tracks"][name][1] for r in rec]
            out[name] = {
                "T_s": tr.T_s,
                "mode": "overlay" if tr.overlay else "server",
                "mean_jc": float(np.mean(jcs)) if jcs else float("nan"),
                "mean_ac": float(np.mean(acs)) if acs and tr.overlay else float("nan"),
                "server_bytes_per_s": float(np.sum(sent)) / (len(sent) * self.dt) if sent else 0.0,
            }
        return out


# ---------------------------------------------------------------------------


def run(config):
    """Run the configured subsystems; one MetricsRow per aggregation window."""
    cfg = config.validate()
    rngs = streams(cfg.seed)
    sam_run = SamRun(cfg, rngs) if cfg.subsystems in ("sam", "both") else None
    pam_run = PamRun(cfg, rngs) if cfg.subsystems in ("pam", "both") else None
    rows = []
    window = []
    for t in range(cfg.steps):
        row = sam_run.step(t) if sam_run else MetricsRow(step=t)
        if pam_run:
            row.mean_jc, row.mean_ac, row.server_bytes_per_s = pam_run.step(t)
        window.append(row)
        if len(window) == cfg.window_steps:
            rows.append(aggregate(window))
            window = []
    if window:
        rows.append(aggregate(window))
    result = RunResult(rows=rows, summary=summarize(rows) if rows else initial_summary(cfg, sam_run))
    if sam_run:
        result.migrations = sam_run.system.migration_log
    if pam_run:
        result.pam_rows = pam_run.rows
        result.pam_tracks = pam_run.track_summary()
    if cfg.out_dir:
        write_outputs(cfg, result, pam_run.sim.tracks if pam_run else None)
    return result


def aggregate(window):
    if len(window) == 1:
        return window[0]

    def mean(name):
        vals = [getattr(r, name) for r in window if not math.isnan(getattr(r, name))]
        return float(np.mean(vals)) if vals else float("nan")

    return MetricsRow(
        step=window[-1].step,
        players=window[-1].players,
        cost_per_minute=mean("cost_per_minute"),
        gamma_r=mean("gamma_r"),
        availability=mean("availability"),
        overloaded_nodes=max(r.overloaded_nodes for r in window),
        migrations=sum(r.migrations for r in window),
        mean_jc=mean("mean_jc"),
        mean_ac=mean("mean_ac"),
        server_bytes_per_s=mean("server_bytes_per_s"),
        cloud_nodes=window[-1].cloud_nodes,
    )


def initial_summary(cfg, sam_run):
    out = {"windows": 0}
    if sam_run:
        out["players"] = len(sam_run.pop)
        out["cloud_nodes"] = len(sam_run.system.clouds())
    return out


def summarize(series, peak_fraction=0.8):
    """Means and peaks of a metrics series; peak windows have players >= peak_fraction * max."""
    if not series:
        raise ValueError("empty series")
    out = {"windows": len(series)}
    for name in METRIC_FIELDS[1:]:
        vals = np.array([getattr(r, name) for r in series], dtype=float)
        vals = vals[~np.isnan(vals)]
        if len(vals):
            out[f"mean_{name}"] = float(vals.mean())
            out[f"max_{name}"] = float(vals.max())
    players = np.array([r.players for r in series], dtype=float)
    if players.max() > 0:
        peak = players >= peak_fraction * players.max()
        for name in ("cost_per_minute", "availability"):
            vals = np.array([getattr(r, name) for r in series], dtype=float)
            out[f"peak_{name}"] = float(vals[peak].mean())
            out[f"offpeak_{name}"] = float(vals[~peak].mean()) if (~peak).any() else float("nan")
    return out


def cost_gap(summary_low_risk, summary_high_risk, key="mean_cost_per_minute"):
    """Relative saving of the higher risk budget over the lower one."""
    lo = summary_low_risk[key]
    return (lo - summary_high_risk[key]) / lo if lo else 0.0


# ---------------------------------------------------------------------------
# outputs


def config_hash(cfg):
    """Short digest of everything that determines the results (the output path does not)."""
    return hashlib.sha256(repr(asdict(replace(cfg, out_dir=None))).encode()).hexdigest()[:16]


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in METRIC_FIELDS])


def write_pam_csv(path, pam_rows, tracks):
    """One line per (step, track): JC, sampled AC, server bytes and overlay messages of that step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PAM_FIELDS)
        for row in pam_rows:
            for name, (jc, sent) in row["tracks"].items():
                tr = tracks[name]
                w.writerow([row["step"], name, _fmt(float(tr.T_s)), "overlay" if tr.overlay else "server",
                            _fmt(jc), _fmt(row["mean_ac"]), _fmt(sent), row["overlay_msgs"]])


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.9g}"
    return str(v)


def write_manifest(path, cfg, summary):
    import scipy

    from . import __version__
    lines = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "subsystems": cfg.subsystems,
        "steps": cfg.steps,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
    }
    for k, v in summary.items():
        lines[f"summary.{k}"] = _fmt(v) if isinstance(v, float) else v
    with open(path, "w") as fh:
        for k, v in lines.items():
            fh.write(f"{k}={v}\n")


def write_outputs(cfg, result, tracks=None):
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_metrics_csv(os.path.join(cfg.out_dir, "metrics.csv"), result.rows)
    if result.pam_rows and tracks is not None:
        write_pam_csv(os.path.join(cfg.out_dir, "pam.csv"), result.pam_rows, tracks)
    if result.migrations:
        vsdht.write_migration_log(os.path.join(cfg.out_dir, "migrations.csv"), result.migrations)
    write_manifest(os.path.join(cfg.out_dir, "manifest.txt"), cfg, result.summary)

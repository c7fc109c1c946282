"""Named scenarios: a base SimConfig, the parameters swept over and the seeds.

The SAM scenarios share one workload (``sam_workload``) and the PAM ones
another (``pam_world``); see the README for how the constants were chosen.
"""

import csv
import itertools
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import config as configmod
from . import harness, pamsim, sizing, vsdht, workload
from .harness import SimConfig
from .sam import ManagerConfig

# one SAM step is one simulated minute and one manager epoch
SAM_STEPS = 400
PAM_STEPS = 60
PAM_WARMUP = 20
PAM_SPEED = 25.0
# random-layer size and exchange period; calibrated, see the README
PAM_GOSSIP = dict(random_size=5, random_every=8)


def sam_workload(P_max=2000):
    return SimConfig(
        world=workload.WorldConfig(P_max=P_max, aoi_radius=50.0),
        manager=ManagerConfig(epoch_steps=1, peer_cap=4e6, xi_mode="relative"),
        vs_count=100,
        steps=SAM_STEPS,
        step_seconds=60.0,
        subsystems="sam",
    )


def pam_world():
    return workload.WorldConfig(width=2500.0, height=2500.0, aoi_radius=100.0, speed=PAM_SPEED, delta_t=0.25)


def pam_workload(**pam_kw):
    pcfg = pamsim.PamConfig(**{"steps": PAM_STEPS, "warmup": PAM_WARMUP, **PAM_GOSSIP, **pam_kw})
    return SimConfig(pam=pcfg, pam_world=pam_world(), steps=PAM_STEPS, subsystems="pam")


@dataclass
class Preset:
    description: str
    base: SimConfig
    grid: dict = field(default_factory=dict)   # override key -> list of value strings
    seeds: tuple = (0,)


PRESETS = {
    "reference_workload": Preset(
        "SAM on the reference workload: 2000 players, 100 VSs, risk 0.1, one season",
        sam_workload(),
    ),
    "cost_risk": Preset(
        "cost per minute for risk limits 0.1, 0.5, 0.9 at 2000 players",
        sam_workload(), {"manager.risk_limit": ["0.1", "0.5", "0.9"]}, (0, 1, 2),
    ),
    "cost_players": Preset(
        "mean cost per minute versus maximum players for risk limits 0.1 and 0.9",
        sam_workload(), {"world.P_max": ["1000", "2000", "5000", "10000"], "manager.risk_limit": ["0.1", "0.9"]},
    ),
    "xi_sensitivity": Preset(
        "availability and cost for prediction error thresholds 0.05 and 1.0",
        sam_workload(), {"manager.xi_est": ["0.05", "1.0"]}, (0, 1, 2),
    ),
    "pam_ts": Preset(
        "JC versus server period for both heuristics, overlay and server-only",
        pam_workload(T_s=(0.25, 0.5, 1.0, 1.5, 2.0, 2.5)), {"pam.heuristic": ["greedy", "score"]}, (0, 1, 2, 3, 4),
    ),
    "pam_resolution": Preset(
        "AC versus tile grid resolution for both heuristics",
        pam_workload(T_s=(1.0,), server_only=False),
        {"pam.grid_resolution": ["4", "8", "16", "32", "64"], "pam.heuristic": ["greedy", "score"]},
    ),
    "server_bandwidth": Preset(
        "server upload with 1000 clients and no overlay",
        pam_workload(n_peers=1000, T_s=(0.25, 0.5, 1.0), overlay=False, ac_every=0),
    ),
}

ANALYTIC = {
    "migration_cdf": "fraction of migrations under 1 s for 2-16 KB payloads, default and shipped RTT",
    "vs_sizing": "largest entity count per VS with 95th-percentile migration time under 1 s",
}

SWEEP_FIELDS = (
    "run", "seed", "params", "track", "mean_jc", "mean_ac", "server_bytes_per_s",
    "mean_cost_per_minute", "peak_cost_per_minute", "offpeak_cost_per_minute",
    "mean_availability", "peak_availability", "offpeak_availability", "mean_gamma_r", "max_cloud_nodes",
)


def names():
    return sorted(PRESETS) + sorted(ANALYTIC)


def expand(grid):
    """Cartesian product of a sweep grid -> list of [(key, value), ...]."""
    if not grid:
        return [[]]
    keys = list(grid)
    return [list(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def fold_server_periods(grid):
    """Server periods share one overlay, so a sweep over pam.T_s becomes one run with several tracks."""
    grid = dict(grid)
    fixed = []
    for key in ("pam.T_s", "T_s"):
        if key in grid:
            fixed.append(("pam.T_s", ",".join(grid.pop(key))))
    return grid, fixed


def sweep_rows(label, seed, params, result):
    text = ";".join(f"{k}={v}" for k, v in params)
    s = result.summary
    base = {f: s.get(f, float("nan")) for f in SWEEP_FIELDS[7:]}
    if not result.pam_tracks:
        return [{"run": label, "seed": seed, "params": text, "track": "",
                 "mean_jc": float("nan"), "mean_ac": float("nan"), "server_bytes_per_s": float("nan"), **base}]
    return [{"run": label, "seed": seed, "params": text, "track": name, "mean_jc": t["mean_jc"],
             "mean_ac": t["mean_ac"], "server_bytes_per_s": t["server_bytes_per_s"], **base}
            for name, t in result.pam_tracks.items()]


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: harness._fmt(v) if isinstance(v, float) else v for k, v in r.items()})


def run_grid(base, grid, seeds, out_dir=None, progress=None):
    """Run every grid point for every seed; returns sweep rows (one per run, or per track)."""
    grid, fixed = fold_server_periods(grid)
    base = configmod.apply_overrides(base, [f"{k}={v}" for k, v in fixed])
    rows = []
    for i, params in enumerate(expand(grid)):
        cfg = configmod.apply_overrides(base, [f"{k}={v}" for k, v in params])
        for seed in seeds:
            label = f"run{i:03d}"
            run_cfg = replace(cfg, seed=seed, out_dir=os.path.join(out_dir, f"{label}_seed{seed}") if out_dir else None)
            result = harness.run(run_cfg)
            new = sweep_rows(label, seed, params, result)
            rows.extend(new)
            if progress:
                progress(new)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_sweep_csv(os.path.join(out_dir, "sweep.csv"), rows)
    return rows


def run_analytic(name, out_dir=None, seed=0, rtt_file=None):
    """The two migration-time studies; returns rows of (model, x, value)."""
    rng = np.random.default_rng(seed)
    models = {"default": vsdht.RttModel(),
              "file": vsdht.RttModel.from_file(rtt_file or sizing.king_like_rtt_path())}
    rows = []
    if name == "migration_cdf":
        header = ("rtt_model", "payload_kb", "fraction_under_1s")
        for label, model in models.items():
            for kb, frac in sizing.migration_table(model, rng).items():
                rows.append((label, kb, frac))
    elif name == "vs_sizing":
        header = ("rtt_model", "quantile", "max_entities")
        for label, model in models.items():
            rows.append((label, 95, sizing.max_entities_under(model, rng)))
    else:
        raise KeyError(name)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([f"{v:.6g}" if isinstance(v, float) and not math.isnan(v) else v for v in r])
    return header, rows

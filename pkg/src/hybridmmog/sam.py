"""State action manager: load prediction, risk/cost accounting, VS placement.

Every epoch the manager applies the previous plan (recruit clouds, migrate,
release idle clouds), ingests prediction updates sent by the nodes, and
computes the next plan with two greedy passes: pick the VSs worth moving,
then pick a destination for each one under load-factor and risk limits.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import vsdht
from .vsdht import CLOUD, PEER, Clock, NodeSpec

log = logging.getLogger(__name__)

GB = 1e9


class ManagerError(RuntimeError):
    pass


@dataclass
class ManagerConfig:
    risk_limit: float = 0.1
    LF_up: float = 0.8
    LF_bot: float = 0.2
    P_size: int = 5
    xi_est: float = 0.05
    epoch_steps: int = 300
    alpha: float = 0.5
    cloud_cap: float = 12.5e6          # bytes/s
    cloud_rcost_hour: float = 0.26     # $/h
    cloud_bcost_gb: float = 0.12       # $/GB
    peer_cap: float = 0.5e6            # bytes/s
    peer_fprob: float = 0.01           # per epoch
    xi_scale: Optional[float] = None   # bytes/s; None -> peer_cap
    xi_mode: str = "capacity"          # "capacity" or "relative" (to the value last sent)
    xi_floor: float = 1e3              # bytes/s, lower bound of the relative yardstick

    def validate(self):
        if not 0.0 <= self.risk_limit <= 1.0:
            raise ManagerError("risk_limit must be in [0, 1]")
        if not 0.0 < self.LF_bot < self.LF_up <= 1.0:
            raise ManagerError("need 0 < LF_bot < LF_up <= 1")
        if self.P_size < 0 or self.epoch_steps < 1:
            raise ManagerError("P_size must be >= 0 and epoch_steps >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ManagerError("alpha must be in (0, 1]")
        if not 0.0 <= self.peer_fprob <= 1.0:
            raise ManagerError("peer_fprob must be in [0, 1]")
        if self.xi_mode not in ("capacity", "relative"):
            raise ManagerError(f"unknown xi_mode {self.xi_mode!r}")
        return self

    def error_scale(self, last_sent=0.0):
        """Yardstick the prediction error is compared against, times xi_est."""
        if self.xi_mode == "relative":
            return max(last_sent, self.xi_floor)
        return self.peer_cap if self.xi_scale is None else self.xi_scale

    def cloud_spec(self, node_id, epoch_seconds):
        return NodeSpec(
            node_id=node_id, kind=CLOUD, n_cap=self.cloud_cap,
            n_bcost=self.cloud_bcost_gb / GB,
            n_rcost=self.cloud_rcost_hour * epoch_seconds / 3600.0,
        )

    def peer_spec(self, node_id):
        return NodeSpec(node_id=node_id, kind=PEER, n_cap=self.peer_cap, n_fprob=self.peer_fprob)


# ---------------------------------------------------------------------------
# load prediction


@dataclass
class LoadPredictor:
    """Node-side simple exponential smoothing for one VS."""

    vs_id: int
    level: float = 0.0
    prev_level: float = 0.0
    alpha: float = 0.5
    last_sent: float = 0.0


@dataclass(frozen=True)
class Prediction:
    level: float = 0.0
    slope: float = 0.0


def update_local_prediction(predictor, measured_load, xi_est, scale=1.0, dt=1.0):
    """One cycle of the node-side estimator.

    The smoothed level follows the measurements every cycle. When the value
    the manager holds is off by at least ``xi_est * scale`` the level is
    re-anchored on the measurement and ``(vs_id, level, slope)`` is returned
    as the message to send; otherwise the message is ``None``.
    """
    if measured_load < 0:
        raise ValueError("measured load must be >= 0")
    p = replace(predictor)
    p.prev_level = p.level
    p.level = p.alpha * measured_load + (1.0 - p.alpha) * p.level
    if abs(p.last_sent - measured_load) >= xi_est * scale:
        p.level = float(measured_load)
        p.last_sent = p.level
        return p, (p.vs_id, p.level, (p.level - p.prev_level) / dt)
    return p, None


def apply_prediction_updates(store, messages, known=None):
    """Manager side: overwrite the stored function of each reported VS, in order."""
    out = dict(store)
    for vs_id, level, slope in messages:
        if known is not None and vs_id not in known:
            log.warning("dropping prediction update for unknown VS %x", vs_id)
            continue
        if known is None and vs_id not in out:
            log.warning("dropping prediction update for unknown VS %x", vs_id)
            continue
        out[vs_id] = Prediction(float(level), float(slope))
    return out


# ---------------------------------------------------------------------------
# accounting


@dataclass
class RiskReport:
    gamma: float
    gamma_max: float
    gamma_r: float


def peer_failure_prob(nodes, default=0.0):
    probs = [n.n_fprob for n in nodes.values() if n.kind == PEER]
    return max(probs) if probs else default


def risk(assignment, nodes, vs_objects, f_peer=None):
    if f_peer is None:
        f_peer = peer_failure_prob(nodes)
    gamma = sum(vs_objects.get(v, 0) * nodes[n].n_fprob for v, n in assignment.items())
    gamma_max = sum(vs_objects.get(v, 0) for v in assignment) * f_peer
    gamma_r = gamma / gamma_max if gamma_max > 0 else 0.0
    return RiskReport(gamma, gamma_max, gamma_r)


def hosted(assignment, node_id):
    return [v for v, n in assignment.items() if n == node_id]


def load_factor(node, assignment, loads, t=None):
    if node.n_cap <= 0:
        raise ValueError("node capacity must be > 0")
    return sum(loads.get(v, 0.0) for v in hosted(assignment, node.node_id)) / node.n_cap


def cost(assignment, nodes, loads, t=None, interval_seconds=1.0):
    """Bandwidth cost of the hosted load over the interval plus rent of every node."""
    band = sum(loads.get(v, 0.0) * interval_seconds * nodes[n].n_bcost for v, n in assignment.items())
    rent = sum(n.n_rcost for n in nodes.values())
    return band + rent


# ---------------------------------------------------------------------------
# planning


@dataclass
class EpochPlan:
    epoch: int
    migrations: list = field(default_factory=list)   # (vs_id, dst node id)
    recruits: list = field(default_factory=list)     # NodeSpec
    releases: list = field(default_factory=list)     # node ids
    projected_risk: float = 0.0


@dataclass
class PlanningView:
    """The manager's copy of the system used to compute one plan."""

    nodes: dict                 # node_id -> NodeSpec
    assignment: dict            # vs_id -> node_id (pooled VSs removed)
    predicted: dict             # vs_id -> predicted load (bytes/s)
    slopes: dict                # vs_id -> derivative of the prediction
    vs_objects: dict            # vs_id -> entity count
    backed_up: set = field(default_factory=set)
    f_peer: float = 0.0
    interval_seconds: float = 60.0
    next_node_id: int = 0

    def node_load(self, node_id):
        return sum(self.predicted.get(v, 0.0) for v in hosted(self.assignment, node_id))

    def plf(self, node_id):
        return self.node_load(node_id) / self.nodes[node_id].n_cap

    def gamma(self):
        return sum(self.vs_objects.get(v, 0) * self.nodes[n].n_fprob for v, n in self.assignment.items())

    def gamma_max(self):
        return sum(self.vs_objects.values()) * self.f_peer

    def relative(self, gamma):
        gm = self.gamma_max()
        return gamma / gm if gm > 0 else 0.0


def _node_order(view):
    return sorted(view.nodes)


def select_vs(view, LF_up, LF_bot, P_size, rng=None, risk_limit=None):
    """Build the pool of VSs to (re)place; removals are applied to ``view``.

    Stages: VSs off nodes predicted above LF_up (steepest rising first),
    VSs running on backup clouds, all VSs of nodes below LF_bot, random
    padding up to P_size. With ``risk_limit`` set, peer VSs are also pulled
    (largest object count first) while the remaining placement is at or
    above the limit.
    """
    pool = []
    in_pool = set()

    def take(v):
        if v not in in_pool:
            in_pool.add(v)
            pool.append(v)
            view.assignment.pop(v, None)

    for n in _node_order(view):
        while view.plf(n) > LF_up:
            vs_here = hosted(view.assignment, n)
            if not vs_here:
                break
            take(max(vs_here, key=lambda v: (view.slopes.get(v, 0.0), -v)))

    if risk_limit is not None and view.gamma_max() > 0:
        while view.relative(view.gamma()) >= risk_limit and view.gamma() > 0:
            peer_vs = [v for v, n in view.assignment.items() if view.nodes[n].n_fprob > 0]
            take(max(peer_vs, key=lambda v: (view.vs_objects.get(v, 0) * view.nodes[view.assignment[v]].n_fprob, -v)))

    for v in sorted(view.backed_up):
        take(v)

    if len(pool) < P_size:
        for n in _node_order(view):
            if view.plf(n) < LF_bot:
                for v in sorted(hosted(view.assignment, n)):
                    take(v)

    if len(pool) < P_size:
        rest = sorted(set(view.vs_objects) - in_pool)
        if rest:
            rng = rng if rng is not None else np.random.default_rng(0)
            k = min(P_size - len(pool), len(rest))
            for i in rng.choice(len(rest), size=k, replace=False):
                take(rest[int(i)])
    return pool


def _recruit(view, plan, cfg):
    node = cfg.cloud_spec(view.next_node_id, view.interval_seconds)
    view.next_node_id += 1
    view.nodes[node.node_id] = node
    plan.recruits.append(node)
    return node.node_id


def select_destination(pool, view, risk_limit, LF_up, cfg, epoch=0, current=None):
    """Greedy destination choice for each pooled VS; returns an ``EpochPlan``.

    ``current`` maps vs_id -> node currently hosting it (for deciding which
    placements are real migrations). The view ends up holding the planned
    assignment.
    """
    plan = EpochPlan(epoch=epoch)
    current = current or {}
    for v in pool:
        load_v = view.predicted.get(v, 0.0)
        obj_v = view.vs_objects.get(v, 0)
        fits = [n for n in _node_order(view) if (view.node_load(n) + load_v) / view.nodes[n].n_cap < LF_up]
        chosen = None
        if fits:
            g = view.gamma()
            safe = []
            for n in fits:
                after = g + obj_v * view.nodes[n].n_fprob
                if view.relative(after) < risk_limit or after <= g:
                    safe.append(n)
            if safe:
                def marginal(n):
                    node = view.nodes[n]
                    rent = node.n_rcost if not hosted(view.assignment, n) else 0.0
                    return (load_v * view.interval_seconds * node.n_bcost + rent, n)
                chosen = min(safe, key=marginal)
        if chosen is None:
            chosen = _recruit(view, plan, cfg)
        view.assignment[v] = chosen
        if current.get(v) != chosen:
            plan.migrations.append((v, chosen))

    busy = set(view.assignment.values())
    idle_clouds = [n for n in _node_order(view) if view.nodes[n].kind == CLOUD and n not in busy]
    peer_hosting = any(view.nodes[n].kind == PEER for n in busy)
    if peer_hosting and not any(view.nodes[n].kind == CLOUD for n in busy):
        # keep one cloud around to hold the backups of peer-hosted VSs
        if idle_clouds:
            idle_clouds = idle_clouds[1:]
        else:
            _recruit(view, plan, cfg)
    plan.releases = idle_clouds
    for n in idle_clouds:
        del view.nodes[n]
    plan.recruits = [r for r in plan.recruits if r.node_id in view.nodes]
    plan.projected_risk = view.relative(view.gamma())
    return plan


# ---------------------------------------------------------------------------
# exhaustive optimum (stand-in for the MIP)

MAX_ORACLE_VS = 12
MAX_ORACLE_NODES = 6


@dataclass
class Instance:
    loads: dict          # vs_id -> load (bytes/s)
    objects: dict        # vs_id -> entity count
    nodes: list          # NodeSpec
    risk_limit: float    # relative
    interval_seconds: float = 60.0
    f_peer: Optional[float] = None


def assignment_cost(assignment, instance):
    """Objective: bandwidth of hosted load plus rent of nodes hosting >= 1 VS."""
    nodes = {n.node_id: n for n in instance.nodes}
    band = sum(instance.loads[v] * instance.interval_seconds * nodes[n].n_bcost for v, n in assignment.items())
    rent = sum(nodes[n].n_rcost for n in set(assignment.values()))
    return band + rent


def assignment_feasible(assignment, instance):
    nodes = {n.node_id: n for n in instance.nodes}
    if set(assignment) != set(instance.loads):
        return False
    per_node = {}
    for v, n in assignment.items():
        per_node[n] = per_node.get(n, 0.0) + instance.loads[v]
    if any(load > nodes[n].n_cap for n, load in per_node.items()):
        return False
    f_peer = instance.f_peer if instance.f_peer is not None else peer_failure_prob(nodes)
    gamma = sum(instance.objects[v] * nodes[n].n_fprob for v, n in assignment.items())
    gamma_max = sum(instance.objects.values()) * f_peer
    return gamma <= instance.risk_limit * gamma_max + 1e-12


def optimal_assignment(instance):
    """Minimum-cost feasible assignment by exhaustive search.

    Depth-first over every VS-to-node choice; branches are cut only when they
    already break capacity or risk, or already cost at least the incumbent.
    Returns ``(assignment, cost)`` or ``(None, math.inf)`` when infeasible.
    """
    vs_ids = sorted(instance.loads, key=lambda v: (-instance.loads[v], v))
    nodes = sorted(instance.nodes, key=lambda n: n.node_id)
    if len(vs_ids) > MAX_ORACLE_VS or len(nodes) > MAX_ORACLE_NODES:
        raise ManagerError(f"instance too large for exhaustive search ({len(vs_ids)} VS, {len(nodes)} nodes)")
    f_peer = instance.f_peer if instance.f_peer is not None else peer_failure_prob({n.node_id: n for n in nodes})
    risk_budget = instance.risk_limit * sum(instance.objects.values()) * f_peer + 1e-12
    used = [0.0] * len(nodes)
    count = [0] * len(nodes)
    choice = [None] * len(vs_ids)
    best = [math.inf, None]

    def dfs(i, gamma, acc):
        if acc >= best[0]:
            return
        if i == len(vs_ids):
            best[0] = acc
            best[1] = {vs_ids[k]: nodes[choice[k]].node_id for k in range(len(vs_ids))}
            return
        v = vs_ids[i]
        load = instance.loads[v]
        tried_empty = set()
        for j, node in enumerate(nodes):
            if used[j] + load > node.n_cap:
                continue
            g = gamma + instance.objects[v] * node.n_fprob
            if g > risk_budget:
                continue
            if count[j] == 0:
                # identical empty nodes are interchangeable
                key = (node.kind, node.n_cap, node.n_bcost, node.n_rcost, node.n_fprob)
                if key in tried_empty:
                    continue
                tried_empty.add(key)
            step = load * instance.interval_seconds * node.n_bcost + (node.n_rcost if count[j] == 0 else 0.0)
            used[j] += load
            count[j] += 1
            choice[i] = j
            dfs(i + 1, g, acc + step)
            used[j] -= load
            count[j] -= 1

    dfs(0, 0.0, 0.0)
    return best[1], best[0]


def greedy_assignment(instance, cfg, clouds_only=False):
    """Place every VS of an instance with the destination heuristic.

    Predictions are taken to be exact. Returns ``(assignment, nodes, plan)``
    where ``nodes`` includes any recruited clouds.
    """
    nodes = {n.node_id: n for n in instance.nodes if not (clouds_only and n.kind == PEER)}
    f_peer = instance.f_peer if instance.f_peer is not None else peer_failure_prob({n.node_id: n for n in instance.nodes})
    view = PlanningView(
        nodes=dict(nodes), assignment={}, predicted=dict(instance.loads), slopes={},
        vs_objects=dict(instance.objects), f_peer=f_peer,
        interval_seconds=instance.interval_seconds,
        next_node_id=max([n.node_id for n in instance.nodes], default=-1) + 1,
    )
    pool = sorted(instance.loads, key=lambda v: (-instance.loads[v], v))
    limit = 0.0 if clouds_only else instance.risk_limit
    plan = select_destination(pool, view, limit, cfg.LF_up, cfg)
    return dict(view.assignment), dict(view.nodes), plan


# ---------------------------------------------------------------------------
# the running system


@dataclass
class EpochStats:
    epoch: int
    migrations: int = 0
    aborted: int = 0
    recruits: int = 0
    releases: int = 0
    promotions: int = 0
    projected_risk: float = 0.0


class SamSystem:
    """Nodes, VS hosting, predictors and the manager for one simulation."""

    def __init__(self, cfg, dht, n_peers, rng, rtt_model=None, step_seconds=60.0, backup_sync_seconds=30.0):
        self.cfg = cfg.validate()
        self.dht = dht
        self.rng = rng
        self.rtt = rtt_model or vsdht.RttModel()
        self.step_seconds = step_seconds
        self.epoch_seconds = cfg.epoch_steps * step_seconds
        self.backup_sync_seconds = backup_sync_seconds
        self.nodes = {}
        self.next_node_id = 0
        cloud = self._new_cloud()
        for _ in range(n_peers):
            self._new_peer()
        # bootstrap: everything on one cloud node
        for vs in dht.vss:
            vs.host = cloud.node_id
        self.predictors = {vs.vs_id: LoadPredictor(vs.vs_id, alpha=cfg.alpha) for vs in dht.vss}
        self.store = {vs.vs_id: Prediction() for vs in dht.vss}
        self.outbox = []
        self.plan = None
        self.backups = vsdht.BackupMap()
        self.migration_log = []
        self.epoch = 0
        self.last_sync = 0.0
        self.failed = []

    # -- node pool --------------------------------------------------------

    def _new_cloud(self):
        node = self.cfg.cloud_spec(self.next_node_id, self.epoch_seconds)
        self.next_node_id += 1
        self.nodes[node.node_id] = node
        return node

    def _new_peer(self):
        node = self.cfg.peer_spec(self.next_node_id)
        self.next_node_id += 1
        self.nodes[node.node_id] = node
        return node

    def assignment(self):
        return {vs.vs_id: vs.host for vs in self.dht.vss}

    def clouds(self):
        return [n for n in sorted(self.nodes) if self.nodes[n].kind == CLOUD]

    def peers(self):
        return [n for n in sorted(self.nodes) if self.nodes[n].kind == PEER]

    def backup_host(self):
        clouds = self.clouds()
        return clouds[0] if clouds else None

    def refresh_backups(self, now):
        """Every peer-hosted VS has exactly one bVS on a cloud; others none."""
        host = self.backup_host()
        for vs in self.dht.vss:
            on_peer = self.nodes[vs.host].kind == PEER
            if on_peer:
                if host is None:
                    host = self._new_cloud().node_id
                b = self.backups.get(vs.vs_id)
                if b is None:
                    self.backups[vs.vs_id] = vsdht.Backup(host, dict(vs.state), now)
                elif b.cloud_id not in self.nodes:
                    b.cloud_id = host
            else:
                self.backups.pop(vs.vs_id, None)
        if now - self.last_sync >= self.backup_sync_seconds:
            for vs_id in self.backups:
                self.backups.sync(self.dht.by_id[vs_id], now)
            self.last_sync = now

    # -- per step ---------------------------------------------------------

    def observe(self, vs_loads, dt):
        """Node-side estimation for one cycle; messages go to the outbox."""
        for vs in self.dht.vss:
            p = self.predictors[vs.vs_id]
            scale = self.cfg.error_scale(p.last_sent)
            p, msg = update_local_prediction(p, vs_loads.get(vs.vs_id, 0.0), self.cfg.xi_est, scale, dt)
            self.predictors[vs.vs_id] = p
            if msg is not None:
                self.outbox.append(msg)

    def node_loads(self, vs_loads):
        out = {n: 0.0 for n in self.nodes}
        for vs in self.dht.vss:
            out[vs.host] += vs_loads.get(vs.vs_id, 0.0)
        return out

    def fail_peers(self, clock):
        """Each peer fails with its per-epoch probability; replacements join."""
        promoted = 0
        for n in self.peers():
            node = self.nodes[n]
            if self.rng.random() < node.n_fprob:
                promoted += self.fail_peer(n, clock)
                self._new_peer()
        return promoted

    def fail_peer(self, node_id, clock):
        node = self.nodes[node_id]
        self.refresh_backups(clock.now)
        moves = vsdht.promote_backup(node, self.backups, self.dht.by_id, self.nodes)
        node.alive = False
        del self.nodes[node_id]
        self.failed.append(node_id)
        for rec in self.migration_log:
            if rec.dst == node_id and not rec.aborted and rec.step_completed >= clock.step:
                vs = self.dht.by_id[rec.vs_id]
                if vs.host == node_id:
                    vsdht.abort_migration(vs, rec)
        return len(moves)

    # -- per epoch --------------------------------------------------------

    def apply_plan(self, clock):
        stats = EpochStats(epoch=self.epoch)
        plan = self.plan
        if plan is None:
            return stats
        for spec in plan.recruits:
            self.nodes[spec.node_id] = spec
            self.next_node_id = max(self.next_node_id, spec.node_id + 1)
            stats.recruits += 1
        for vs_id, dst in plan.migrations:
            vs = self.dht.by_id[vs_id]
            vs.backed_up = False
            if vs.host == dst:
                continue
            dst_node = self.nodes.get(dst)
            if dst_node is None:
                stats.aborted += 1
                continue
            rec = vsdht.migrate_vs(vs, self.nodes[vs.host], dst_node, clock, self.rtt, self.rng, self.dht.vs_count)
            self.migration_log.append(rec)
            stats.migrations += 1
        for vs_id in plan_pooled(plan):
            self.dht.by_id[vs_id].backed_up = False
        busy = {vs.host for vs in self.dht.vss}
        keep = None
        if any(self.nodes[h].kind == PEER for h in busy) and not any(self.nodes[h].kind == CLOUD for h in busy):
            keep = self.backup_host()
        for n in plan.releases:
            if n in self.nodes and n not in busy and n != keep and self.nodes[n].kind == CLOUD:
                del self.nodes[n]
                stats.releases += 1
        return stats

    def view(self):
        return PlanningView(
            nodes=dict(self.nodes),
            assignment=self.assignment(),
            predicted={v: p.level for v, p in self.store.items()},
            slopes={v: p.slope for v, p in self.store.items()},
            vs_objects={vs.vs_id: len(vs.entities) for vs in self.dht.vss},
            backed_up={vs.vs_id for vs in self.dht.vss if vs.backed_up},
            f_peer=self.cfg.peer_fprob,
            interval_seconds=self.epoch_seconds,
            next_node_id=self.next_node_id,
        )

    def run_epoch(self, clock):
        stats = self.apply_plan(clock)
        self.refresh_backups(clock.now)
        msgs, self.outbox = self.outbox, []
        self.store = apply_prediction_updates(self.store, msgs)
        view = self.view()
        current = dict(view.assignment)
        pool = select_vs(view, self.cfg.LF_up, self.cfg.LF_bot, self.cfg.P_size, self.rng, self.cfg.risk_limit)
        self.plan = select_destination(pool, view, self.cfg.risk_limit, self.cfg.LF_up, self.cfg, self.epoch, current)
        self.plan.pooled = list(pool)
        self.next_node_id = max(self.next_node_id, view.next_node_id)
        stats.projected_risk = self.plan.projected_risk
        self.epoch += 1
        return stats

    def check_totality(self):
        for vs in self.dht.vss:
            if vs.host not in self.nodes:
                raise vsdht.CorruptionError(f"VS {vs.vs_id:x} assigned to missing node {vs.host}")


def plan_pooled(plan):
    return getattr(plan, "pooled", [])


def run_epoch(system, clock):
    """Apply the last plan, ingest predictions, compute the next plan."""
    return system.run_epoch(clock)

"""Brute-force comparisons for the two greedy heuristics.

* Coverage: greedy neighbour selection against exhaustive search over all
  d-subsets; greedy must reach (1 - 1/e) of the optimum.
* Placement: greedy VS placement against exhaustive assignment; the optimum
  must not cost more than greedy, and greedy not more than using clouds only.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import pam, sam

GREEDY_BOUND = 1.0 - 1.0 / math.e
EPS = 1e-9


def random_coverage_instance(rng, max_neighbors=8, max_d=4, radius=10.0):
    """Peer at the origin plus 1..max_neighbors overlapping AOIs and a view size d."""
    n = int(rng.integers(1, max_neighbors + 1))
    d = int(rng.integers(1, max_d + 1))
    p = pam.Aoi((0.0, 0.0), radius, uid=0)
    neighbors = []
    for i in range(n):
        r = float(rng.uniform(0.3, 1.5)) * radius
        dist = float(rng.uniform(0.0, radius + r))
        ang = float(rng.uniform(0.0, 2.0 * math.pi))
        neighbors.append(pam.Aoi((dist * math.cos(ang), dist * math.sin(ang)), r, uid=i + 1))
    return p, neighbors, d


@dataclass
class CoverageCheck:
    instances: int = 0
    violations: int = 0
    worst_ratio: float = math.inf
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return self.instances > 0 and self.violations == 0


def check_greedy_coverage(n_instances=500, seed=0, grid_resolution=16, max_neighbors=8, max_d=4):
    rng = np.random.default_rng(seed)
    out = CoverageCheck()
    for i in range(n_instances):
        p, nbs, d = random_coverage_instance(rng, max_neighbors, max_d)
        layout = pam.tile_layout(p.radius, grid_resolution)
        masks = pam.neighbor_masks(p, nbs, grid_resolution, layout)
        greedy = pam.union_count([masks[j] for j in pam.greedy_masks(masks, d)])
        _, best = pam.brute_force_masks(masks, d)
        out.instances += 1
        ratio = greedy / best if best else 1.0
        out.worst_ratio = min(out.worst_ratio, ratio)
        if greedy + EPS < GREEDY_BOUND * best:
            out.violations += 1
            out.failures.append((i, greedy, best))
    return out


def random_placement_instance(rng, cfg=None, max_vs=6, max_peers=2):
    """A cloud, one or two peers and 2..max_vs VSs with random loads and sizes."""
    cfg = cfg or sam.ManagerConfig()
    nv = int(rng.integers(2, max_vs + 1))
    npeer = int(rng.integers(1, max_peers + 1))
    loads = {v: float(rng.uniform(0.02, 0.4)) * cfg.peer_cap for v in range(nv)}
    objects = {v: int(rng.integers(1, 20)) for v in range(nv)}
    nodes = [cfg.cloud_spec(0, 60.0)] + [cfg.peer_spec(1 + j) for j in range(npeer)]
    return sam.Instance(loads, objects, nodes, float(rng.choice([0.1, 0.3, 0.5, 0.9])))


@dataclass
class PlacementCheck:
    instances: int = 0
    violations: int = 0
    infeasible_greedy: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return self.instances > 0 and self.violations == 0 and self.infeasible_greedy == 0


def placement_costs(instance, cfg=None):
    """(optimal, greedy, all-cloud) cost of one instance.

    The optimum searches the node set greedy ended up with (including the
    clouds it recruited), so all three are priced over the same candidates.
    """
    cfg = cfg or sam.ManagerConfig()
    ga, gnodes, _ = sam.greedy_assignment(instance, cfg)
    ca, cnodes, _ = sam.greedy_assignment(instance, cfg, clouds_only=True)
    g_inst = sam.Instance(instance.loads, instance.objects, list(gnodes.values()), instance.risk_limit,
                          instance.interval_seconds, instance.f_peer)
    c_inst = sam.Instance(instance.loads, instance.objects, list(cnodes.values()), instance.risk_limit,
                          instance.interval_seconds, instance.f_peer)
    used = sorted(gnodes.values(), key=lambda n: n.node_id)[:sam.MAX_ORACLE_NODES]
    o_inst = sam.Instance(instance.loads, instance.objects, used, instance.risk_limit,
                          instance.interval_seconds, instance.f_peer)
    _, opt = sam.optimal_assignment(o_inst)
    feasible = sam.assignment_feasible(ga, g_inst)
    return opt, sam.assignment_cost(ga, g_inst), sam.assignment_cost(ca, c_inst), feasible


def check_placement_sandwich(n_instances=200, seed=0, cfg=None):
    rng = np.random.default_rng(seed)
    out = PlacementCheck()
    for i in range(n_instances):
        inst = random_placement_instance(rng, cfg)
        opt, greedy, cloud, feasible = placement_costs(inst, cfg)
        out.instances += 1
        if not feasible:
            out.infeasible_greedy += 1
            out.failures.append((i, "greedy infeasible"))
        if opt > greedy + EPS or greedy > cloud + EPS:
            out.violations += 1
            out.failures.append((i, opt, greedy, cloud))
    return out

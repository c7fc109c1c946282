"""Positional action manager: tile coverage, neighbour selection, gossip, replicas.

Coverage of a peer's AOI is approximated on a t x t grid over the AOI's
bounding square. Tiles whose centre falls outside the disk are ignored.
Each neighbour AOI is turned into a bitmask of the tiles it touches, so
coverage of a set is the popcount of the OR of its masks.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SERVER = "server"
OVERLAY = "overlay"

RECORD_BYTES = 24          # 64-bit uid, 2 x float32 position, 64-bit timestamp
MESSAGE_HEADER_BYTES = 28  # IPv4 + UDP headers per update message
MAX_BRUTE_FORCE = 10**6


@dataclass(frozen=True)
class Aoi:
    center: tuple
    radius: float
    uid: Optional[int] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("AOI radius must be > 0")


@dataclass
class TileGrid:
    resolution: int
    counts: np.ndarray      # (t*t,) number of neighbour AOIs touching each tile
    unmasked: np.ndarray    # (t*t,) bool, tile centre inside the disk

    @property
    def covered(self):
        return int(((self.counts > 0) & self.unmasked).sum())

    @property
    def usable(self):
        return int(self.unmasked.sum())


# ---------------------------------------------------------------------------
# tile geometry


def tile_layout(radius, resolution):
    """Tile rectangles relative to the AOI centre and the centre-in-disk mask."""
    if resolution < 1:
        raise ValueError("grid resolution must be >= 1")
    side = 2.0 * radius / resolution
    edges = -radius + side * np.arange(resolution + 1)
    lo = edges[:-1]
    hi = edges[1:]
    # row-major: row index runs over y, column over x
    x0 = np.tile(lo, resolution)
    x1 = np.tile(hi, resolution)
    y0 = np.repeat(lo, resolution)
    y1 = np.repeat(hi, resolution)
    cx = (x0 + x1) / 2
    cy = (y0 + y1) / 2
    unmasked = cx**2 + cy**2 <= radius**2
    return x0, x1, y0, y1, unmasked


def bits_to_int(bool_rows):
    """Pack each boolean row into a Python int (bit i = tile i)."""
    bool_rows = np.atleast_2d(bool_rows)
    packed = np.packbits(bool_rows, axis=1, bitorder="little")
    return [int.from_bytes(row.tobytes(), "little") for row in packed]


def tile_hits(center, radius, neighbor_centers, neighbor_radii, resolution, layout=None):
    """Boolean (k, t*t): unmasked tiles of the AOI that each neighbour disk touches."""
    x0, x1, y0, y1, unmasked = layout if layout is not None else tile_layout(radius, resolution)
    t = resolution
    c = np.asarray(neighbor_centers, dtype=float).reshape(-1, 2) - np.asarray(center, dtype=float)
    r = np.asarray(neighbor_radii, dtype=float).reshape(-1)
    out = np.zeros((len(c), t * t), dtype=bool)
    # disks farther than radius + r from the centre cannot reach the square
    near = np.flatnonzero(np.abs(c).max(axis=1) <= radius + r)
    if len(near) == 0:
        return out
    lo, hi = x0[:t], x1[:t]  # column edges; rows use the same edges
    nx = c[near, :1]
    ny = c[near, 1:]
    dx = np.maximum(np.maximum(lo - nx, nx - hi), 0.0)
    dy = np.maximum(np.maximum(lo - ny, ny - hi), 0.0)
    d2 = dy[:, :, None] ** 2 + dx[:, None, :] ** 2
    hit = d2.reshape(len(near), t * t) <= (r[near] ** 2)[:, None]
    out[near] = hit & unmasked
    return out


def neighbor_masks(p, neighbors, resolution, layout=None):
    if not neighbors:
        return []
    centers = [n.center for n in neighbors]
    radii = [n.radius for n in neighbors]
    return bits_to_int(tile_hits(p.center, p.radius, centers, radii, resolution, layout))


def coverage(p, neighbors, grid_resolution):
    """Tiles of ``p`` touched by at least one neighbour, and the per-tile counts."""
    layout = tile_layout(p.radius, grid_resolution)
    unmasked = layout[4]
    counts = np.zeros(grid_resolution * grid_resolution, dtype=int)
    if neighbors:
        hits = tile_hits(p.center, p.radius, [n.center for n in neighbors], [n.radius for n in neighbors], grid_resolution, layout)
        counts = hits.sum(axis=0)
    grid = TileGrid(grid_resolution, counts, unmasked)
    return grid.covered, grid


def union_count(masks):
    acc = 0
    for m in masks:
        acc |= m
    return acc.bit_count()


# ---------------------------------------------------------------------------
# selection heuristics (operating on precomputed masks)


def greedy_masks(masks, d):
    """Indices picked by d rounds of largest marginal gain.

    Equal gains go to the AOI with the larger own overlap, then to the
    earlier candidate, so rounds with nothing left to gain keep the closest
    peers instead of arbitrary ones.
    """
    chosen = []
    left = list(range(len(masks)))
    own = [m.bit_count() for m in masks]
    acc = 0
    for _ in range(min(d, len(masks))):
        best, best_key = None, None
        for i in left:
            key = ((acc | masks[i]).bit_count(), own[i])
            if best_key is None or key > best_key:
                best, best_key = i, key
        chosen.append(best)
        left.remove(best)
        acc |= masks[best]
    return chosen


def score_masks(masks, d, n_tiles):
    """Indices of the top-d AOIs by summed inverse tile count (stable on ties)."""
    if d >= len(masks):
        return list(range(len(masks)))
    scores = tile_scores(masks, n_tiles)
    order = sorted(range(len(masks)), key=lambda i: -scores[i])
    return order[:d]


def tile_scores(masks, n_tiles):
    counts = np.zeros(n_tiles, dtype=float)
    bools = []
    for m in masks:
        b = np.unpackbits(np.frombuffer(m.to_bytes((n_tiles + 7) // 8, "little"), dtype=np.uint8), bitorder="little")[:n_tiles].astype(bool)
        bools.append(b)
        counts += b
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    return [float(inv[b].sum()) for b in bools]


def greedy_heuristic(p, neighbors, d, grid_resolution):
    if d < 0:
        raise ValueError("d must be >= 0")
    masks = neighbor_masks(p, neighbors, grid_resolution)
    return [neighbors[i] for i in greedy_masks(masks, d)]


def score_heuristic(p, neighbors, d, grid_resolution):
    if d < 0:
        raise ValueError("d must be >= 0")
    masks = neighbor_masks(p, neighbors, grid_resolution)
    return [neighbors[i] for i in score_masks(masks, d, grid_resolution * grid_resolution)]


def select_masks(heuristic, masks, d, n_tiles):
    if heuristic == "greedy":
        return greedy_masks(masks, d)
    if heuristic == "score":
        return score_masks(masks, d, n_tiles)
    raise ValueError(f"unknown heuristic {heuristic!r}")


def brute_force_masks(masks, d):
    """Best d-subset by exhaustive enumeration; first (lexicographic) max wins."""
    n = len(masks)
    d = min(d, n)
    if math.comb(n, d) > MAX_BRUTE_FORCE:
        raise ValueError(f"C({n}, {d}) subsets exceeds the enumeration limit")
    best, best_cov = (), -1
    for combo in itertools.combinations(range(n), d):
        cov = union_count(masks[i] for i in combo)
        if cov > best_cov:
            best, best_cov = combo, cov
    return list(best), max(best_cov, 0)


def brute_force_max_coverage(p, neighbors, d, grid_resolution):
    order = sorted(range(len(neighbors)), key=lambda i: (neighbors[i].uid if neighbors[i].uid is not None else i, i))
    ordered = [neighbors[i] for i in order]
    masks = neighbor_masks(p, ordered, grid_resolution)
    idx, cov = brute_force_masks(masks, d)
    return [ordered[i] for i in idx], cov


# ---------------------------------------------------------------------------
# gossip overlay


@dataclass
class PeerDescriptor:
    peer_id: int
    position: tuple
    timestamp: int


@dataclass
class PeerView:
    d: int = 10
    random_size: int = 20
    stale_threshold: int = 20
    random_layer: dict = field(default_factory=dict)     # peer_id -> PeerDescriptor
    coverage_layer: dict = field(default_factory=dict)   # peer_id -> PeerDescriptor
    pending: dict = field(default_factory=dict)          # candidates received since last ranking


@dataclass
class PeerState:
    peer_id: int
    position: tuple
    radius: float
    view: PeerView
    iteration: int = 0
    messages: int = 0        # gossip messages sent so far (push and pull each count)

    def descriptor(self):
        return PeerDescriptor(self.peer_id, tuple(self.position), self.iteration)


def merge_fresh(into, descriptors, skip=None):
    """Add descriptors keeping the freshest per peer; returns ids that were new."""
    new = []
    for desc in descriptors:
        if desc.peer_id == skip:
            continue
        old = into.get(desc.peer_id)
        if old is None:
            new.append(desc.peer_id)
        if old is None or desc.timestamp > old.timestamp:
            into[desc.peer_id] = desc
    return new


def rank_coverage(state, candidates, heuristic, grid_resolution, layout=None):
    """Pick up to d candidates for the coverage layer; fresher first on ties."""
    now = state.iteration
    view = state.view
    fresh = [c for c in candidates.values() if c.peer_id != state.peer_id and now - c.timestamp <= view.stale_threshold]
    fresh.sort(key=lambda c: (now - c.timestamp, c.peer_id))
    if not fresh:
        return {}
    hits = tile_hits(state.position, state.radius, [c.position for c in fresh], [state.radius] * len(fresh), grid_resolution, layout)
    masks = bits_to_int(hits)
    picked = select_masks(heuristic, masks, view.d, grid_resolution * grid_resolution)
    return {fresh[i].peer_id: fresh[i] for i in picked}


def random_exchange(state, partner, rng):
    """Push-pull of half of each random view plus the sender's own descriptor."""
    def sample(s):
        items = sorted(s.view.random_layer.values(), key=lambda x: x.peer_id)
        k = len(items) // 2
        picked = [items[i] for i in rng.choice(len(items), size=k, replace=False)] if k else []
        return picked + [s.descriptor()]

    to_partner = sample(state)
    to_state = sample(partner)
    arrivals = {}
    for s, incoming in ((state, to_state), (partner, to_partner)):
        new = merge_fresh(s.view.random_layer, incoming, skip=s.peer_id)
        extra = len(s.view.random_layer) - s.view.random_size
        if extra > 0:
            ids = sorted(s.view.random_layer)
            for i in rng.choice(len(ids), size=extra, replace=False):
                del s.view.random_layer[ids[i]]
        arrivals[s.peer_id] = [s.view.random_layer[i] for i in new if i in s.view.random_layer]
        # newly met peers are offered to the coverage layer
        merge_fresh(s.view.pending, arrivals[s.peer_id], skip=s.peer_id)
    return arrivals


def coverage_exchange(state, partner, rng=None, mix=0):
    """Push-pull of coverage layers plus own descriptors.

    With ``mix`` > 0 each side also sends that many entries drawn from its
    random layer, widening the candidate pool of the receiver.
    """
    def message(s):
        out = list(s.view.coverage_layer.values()) + [s.descriptor()]
        if mix and s.view.random_layer:
            items = sorted(s.view.random_layer.values(), key=lambda x: x.peer_id)
            k = min(mix, len(items))
            out += [items[i] for i in rng.choice(len(items), size=k, replace=False)]
        return out

    to_partner = message(state)
    merge_fresh(state.view.pending, message(partner), skip=state.peer_id)
    merge_fresh(partner.view.pending, to_partner, skip=partner.peer_id)


def gossip_cycle(state, network, iteration, rng, heuristic="greedy", grid_resolution=32, random_every=4, layout=None, mix=0):
    """Advance one peer by one iteration of both gossip layers.

    ``network`` maps peer_id -> PeerState of peers currently online. A
    partner that has left is skipped for that layer.
    """
    state.iteration = iteration
    view = state.view
    if iteration % random_every == 0 and view.random_layer:
        ids = sorted(view.random_layer)
        pid = ids[int(rng.integers(len(ids)))]
        partner = network.get(pid)
        if partner is None:
            del view.random_layer[pid]
        else:
            partner.iteration = max(partner.iteration, iteration)
            random_exchange(state, partner, rng)
            state.messages += 1
            partner.messages += 1
    source = view.coverage_layer or view.random_layer
    if source:
        ids = sorted(source)
        pid = ids[int(rng.integers(len(ids)))]
        partner = network.get(pid)
        if partner is None:
            source.pop(pid, None)
        else:
            coverage_exchange(state, partner, rng, mix)
            state.messages += 1
            partner.messages += 1
    if view.coverage_layer or view.pending:
        candidates = dict(view.coverage_layer)
        merge_fresh(candidates, view.pending.values(), skip=state.peer_id)
        view.pending = {}
        view.coverage_layer = rank_coverage(state, candidates, heuristic, grid_resolution, layout)
    return state


# ---------------------------------------------------------------------------
# replicas


@dataclass
class Record:
    position: tuple
    timestamp: float
    source: str = SERVER


class LocalReplica(dict):
    """uid -> Record: what a client believes about entities near it."""

    def put(self, uid, position, timestamp, source):
        old = self.get(uid)
        if old is None or timestamp > old.timestamp:
            self[uid] = Record(tuple(position), timestamp, source)

    def prune(self, center, radius, keep=None):
        cx, cy = center
        for uid in [u for u, r in self.items() if (r.position[0] - cx) ** 2 + (r.position[1] - cy) ** 2 > radius * radius]:
            if uid != keep:
                del self[uid]


def inside(pos, center, radius):
    return (pos[0] - center[0]) ** 2 + (pos[1] - center[1]) ** 2 <= radius * radius


def query_overlay(peer, replica, neighbor_knowledge):
    """Import neighbours' knowledge that lies inside the peer's AOI.

    ``neighbor_knowledge`` is a list of LocalReplica, one per coverage-layer
    neighbour; the freshest record per uid wins, so the result does not
    depend on neighbour order.
    """
    out = LocalReplica(replica)
    for known in neighbor_knowledge:
        for uid, rec in known.items():
            if uid != peer.peer_id and inside(rec.position, peer.position, peer.radius):
                out.put(uid, rec.position, rec.timestamp, OVERLAY)
    return out


def server_update(server_positions, clients, T_s, clock_seconds, radius, dt, phases=None, record_bytes=RECORD_BYTES, header_bytes=MESSAGE_HEADER_BYTES):
    """Authoritative AOI lists for the clients due an update in this step.

    ``server_positions`` maps uid -> (x, y); ``clients`` maps client uid ->
    its position. A client is due when its own update phase (default 0)
    crosses a multiple of ``T_s`` during ``[clock_seconds, clock_seconds + dt)``.
    Returns ``({client: {uid: pos}}, bytes_sent)``.
    """
    out = {}
    sent = 0
    for cid, cpos in clients.items():
        phase = phases.get(cid, 0.0) if phases else 0.0
        if not update_due(clock_seconds, dt, T_s, phase):
            continue
        aoi = {uid: pos for uid, pos in server_positions.items() if uid != cid and inside(pos, cpos, radius)}
        out[cid] = aoi
        sent += header_bytes + record_bytes * len(aoi)
    return out, sent


def updates_due(t, dt, T_s, phases):
    """Vector form of ``update_due`` over per-client phases."""
    k = np.ceil((t - np.asarray(phases)) / T_s - 1e-9)
    return k * T_s + phases < t + dt - 1e-9


def update_due(t, dt, T_s, phase=0.0):
    """True when some k*T_s + phase lies in [t, t + dt)."""
    k = math.ceil((t - phase) / T_s - 1e-9)
    return k * T_s + phase < t + dt - 1e-9


# ---------------------------------------------------------------------------
# metrics


def jc(client, server, d_max, exclude=None):
    """Position-weighted Jaccard similarity of a client replica and the truth.

    ``client`` and ``server`` map uid -> (x, y). Each shared uid adds
    ``max(0, 1 - error / d_max)``; the sum is divided by the union size.
    """
    if d_max <= 0:
        raise ValueError("d_max must be > 0")
    c = {u: p for u, p in client.items() if u != exclude}
    s = {u: p for u, p in server.items() if u != exclude}
    union = len(c.keys() | s.keys())
    if union == 0:
        return 1.0
    total = 0.0
    for u in c.keys() & s.keys():
        a, b = c[u], s[u]
        err = math.hypot(a[0] - b[0], a[1] - b[1])
        total += max(0.0, 1.0 - err / d_max)
    return total / union


def ac(p, view, all_peers, grid_resolution, d, exact_limit=2000):
    """Coverage achieved by ``view`` relative to the best d-subset of ``all_peers``.

    Returns ``(value, exact)``; when the number of subsets is above
    ``exact_limit`` the denominator is the larger of a greedy pick over all
    peers and the view's own coverage, and ``exact`` is False.
    """
    layout = tile_layout(p.radius, grid_resolution)
    others = [q for q in all_peers if q.uid != p.uid]
    masks = neighbor_masks(p, others, grid_resolution, layout)
    useful = [m for m in masks if m]
    achieved = union_count(neighbor_masks(p, list(view), grid_resolution, layout))
    k = min(d, len(useful))
    if math.comb(len(useful), k) <= exact_limit:
        _, best = brute_force_masks(useful, k)
        exact = True
    else:
        best = max(union_count(useful[i] for i in greedy_masks(useful, k)), achieved)
        exact = False
    if best == 0:
        return 1.0, exact
    return achieved / best, exact

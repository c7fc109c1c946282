"""Ring DHT with a virtual-server layer.

Entities hash onto a 2**160 ring. The ring is cut into contiguous half-open
ranges, one per virtual server (VS); a VS is hosted by a physical node and can
move between nodes without touching the ranges. Peer-hosted VSs keep a backup
replica (bVS) on a cloud node that takes over when the peer fails.
"""

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .entities import DESCRIPTOR_BYTES, RING_BITS, RING_SIZE, content_id

log = logging.getLogger(__name__)

ACCESS_ENTRY_BYTES = 12   # client uid, IPv4, port: 3 x 32 bit
ROUTING_ENTRY_BYTES = 24  # 160-bit id + 32-bit address

MSS_BYTES = 1460
INITIAL_WINDOW = 2
HANDSHAKE_RTTS = 1.5

CLOUD = "cloud"
PEER = "peer"


class CorruptionError(RuntimeError):
    """An invariant of the VS layer no longer holds."""


def ring_distance(a, b):
    """Clockwise distance from a to b on the ring."""
    return (b - a) % RING_SIZE


@dataclass
class VirtualServer:
    vs_id: int
    start: int
    end: int
    entities: set = field(default_factory=set)
    routing_table: list = field(default_factory=list)
    access_list: list = field(default_factory=list)
    host: Optional[int] = None
    state: dict = field(default_factory=dict)
    backed_up: bool = False
    migrating_from: Optional[float] = None
    migrating_until: Optional[float] = None

    def contains(self, dht_id):
        width = (self.end - self.start) % RING_SIZE or RING_SIZE
        return ring_distance(self.start, dht_id) < width


@dataclass
class NodeSpec:
    node_id: int
    kind: str
    n_cap: float
    n_bcost: float = 0.0
    n_rcost: float = 0.0
    n_fprob: float = 0.0
    alive: bool = True

    def __post_init__(self):
        if self.kind not in (CLOUD, PEER):
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.kind == CLOUD and self.n_fprob != 0:
            raise ValueError("cloud nodes never fail (n_fprob must be 0)")
        if self.kind == PEER and (self.n_bcost != 0 or self.n_rcost != 0):
            raise ValueError("peer nodes carry no bandwidth or rent cost")
        if not 0.0 <= self.n_fprob <= 1.0:
            raise ValueError("n_fprob must be in [0, 1]")

    @property
    def is_cloud(self):
        return self.kind == CLOUD


@dataclass
class MigrationRecord:
    vs_id: int
    src: int
    dst: int
    payload_bytes: int
    sampled_mt_seconds: float
    step_started: int
    step_completed: int
    aborted: bool = False


@dataclass
class Clock:
    step: int = 0
    step_seconds: float = 0.2

    @property
    def now(self):
        return self.step * self.step_seconds


@dataclass
class RttModel:
    """RTT source: an empirical sample (milliseconds) or a log-normal fit."""

    samples_ms: Optional[np.ndarray] = None
    median_ms: float = 80.0
    sigma: float = 0.914
    loss_prob: float = 0.001

    def __post_init__(self):
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError("loss_prob must be in [0, 1)")
        if self.samples_ms is not None:
            self.samples_ms = np.asarray(self.samples_ms, dtype=float)
            if len(self.samples_ms) == 0 or (self.samples_ms <= 0).any():
                raise ValueError("RTT samples must be positive")

    @classmethod
    def from_file(cls, path, loss_prob=0.001):
        values = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line and not line.startswith("#"):
                    values.append(float(line))
        return cls(samples_ms=np.array(values), loss_prob=loss_prob)

    @classmethod
    def from_percentiles(cls, median_ms, p95_ms, loss_prob=0.001):
        return cls(median_ms=median_ms, sigma=math.log(p95_ms / median_ms) / 1.6448536269514722, loss_prob=loss_prob)

    def draw_seconds(self, rng, size=None):
        if self.samples_ms is not None:
            ms = rng.choice(self.samples_ms, size=size)
        else:
            ms = np.exp(math.log(self.median_ms) + self.sigma * rng.standard_normal(size))
        return ms / 1000.0


def hash_entity(descriptor):
    """SHA-1 of the descriptor's initial content as a 160-bit ring id."""
    return content_id(descriptor)


def partition_ring(vs_count):
    if vs_count < 1:
        raise ValueError("need at least one virtual server")
    starts = [(i * RING_SIZE) // vs_count for i in range(vs_count)]
    ends = starts[1:] + [0]
    return [VirtualServer(vs_id=s, start=s, end=e) for s, e in zip(starts, ends)]


def lookup(dht_id, vs_set):
    """The VS whose half-open range holds ``dht_id`` (``vs_set`` sorted by start)."""
    starts = [vs.start for vs in vs_set]
    i = bisect.bisect_right(starts, dht_id % RING_SIZE) - 1
    return vs_set[i]


def routing_table_length(vs_count):
    return math.ceil(math.log2(vs_count)) if vs_count > 1 else 0


def build_routing_tables(vs_set):
    """Finger entries vs_id + 2**(160 - j), j = 1..ceil(log2 N)."""
    n = len(vs_set)
    starts = [vs.start for vs in vs_set]
    for vs in vs_set:
        fingers = []
        for j in range(1, routing_table_length(n) + 1):
            target = (vs.vs_id + (1 << (RING_BITS - j))) % RING_SIZE
            owner = vs_set[bisect.bisect_right(starts, target) - 1]
            fingers.append((owner.vs_id, owner.host if owner.host is not None else 0))
        vs.routing_table = fingers


def vs_size_bytes(vs, vs_count=None):
    n_routes = routing_table_length(vs_count) if vs_count is not None else len(vs.routing_table)
    return (
        DESCRIPTOR_BYTES * len(vs.entities)
        + ACCESS_ENTRY_BYTES * len(vs.access_list)
        + ROUTING_ENTRY_BYTES * n_routes
    )


def slow_start_rounds(payload_bytes, loss_prob=0.0):
    """Expected slow-start rounds to deliver the payload, loss-inflated.

    Segments grow as w1, 2 w1, 4 w1, ...; delivering d segments takes
    log2(d / w1 + 1) rounds (continuous form), scaled by 1 / (1 - loss).
    """
    if payload_bytes <= 0:
        return 0.0
    segments = math.ceil(payload_bytes / MSS_BYTES)
    return math.log2(segments / INITIAL_WINDOW + 1.0) / (1.0 - loss_prob)


def migration_time_for_rtt(payload_bytes, rtt_seconds, loss_prob):
    return rtt_seconds * (HANDSHAKE_RTTS + slow_start_rounds(payload_bytes, loss_prob))


def sample_migration_time(payload_bytes, rtt_model, rng, size=None):
    """Seconds to move ``payload_bytes``: handshake plus slow-start transfer."""
    if payload_bytes < 0:
        raise ValueError("payload must be >= 0")
    rtt = rtt_model.draw_seconds(rng, size)
    return rtt * (HANDSHAKE_RTTS + slow_start_rounds(payload_bytes, rtt_model.loss_prob))


def migrate_vs(vs, src_node, dst_node, clock, rtt_model, rng, vs_count=None):
    """Move ``vs`` from ``src_node`` to ``dst_node``.

    The five protocol steps collapse to: notify src, transfer payload and
    access list (the sampled migration time), notify clients, join at dst,
    leave at src. The VS is inaccessible for the transfer interval.
    """
    if vs.host != src_node.node_id:
        raise ValueError(f"VS {vs.vs_id:x} is not hosted on node {src_node.node_id}")
    if src_node.node_id == dst_node.node_id:
        return MigrationRecord(vs.vs_id, src_node.node_id, dst_node.node_id, 0, 0.0, clock.step, clock.step)
    payload = vs_size_bytes(vs, vs_count)
    if not dst_node.alive:
        return MigrationRecord(vs.vs_id, src_node.node_id, dst_node.node_id, payload, 0.0, clock.step, clock.step, aborted=True)
    mt = float(sample_migration_time(payload, rtt_model, rng))
    start = clock.now
    vs.migrating_from = start
    vs.migrating_until = start + mt
    vs.host = dst_node.node_id
    done_step = clock.step + int(mt // clock.step_seconds)
    return MigrationRecord(vs.vs_id, src_node.node_id, dst_node.node_id, payload, mt, clock.step, done_step)


def abort_migration(vs, record):
    """Destination failed during the transfer: the VS stays at the source."""
    vs.host = record.src
    vs.migrating_from = vs.migrating_until = None
    record.aborted = True


def inaccessible_fraction(vs, t0, t1):
    """Fraction of [t0, t1) during which ``vs`` was migrating."""
    if vs.migrating_until is None or t1 <= t0:
        return 0.0
    lo = max(t0, vs.migrating_from)
    hi = min(t1, vs.migrating_until)
    return max(0.0, hi - lo) / (t1 - t0)


@dataclass
class Backup:
    cloud_id: int
    snapshot: dict
    taken_at: float


class BackupMap(dict):
    """vs_id -> Backup for every peer-hosted VS."""

    def sync(self, vs, now):
        entry = self[vs.vs_id]
        entry.snapshot = dict(vs.state)
        entry.taken_at = now


def promote_backup(failed_peer, bvs_map, vss, nodes=None):
    """Hand every VS of a failed peer to its backup cloud host.

    ``vss`` maps vs_id -> VirtualServer. Returns ``[(vs_id, peer_id, cloud_id)]``.
    """
    if failed_peer.kind != PEER:
        raise ValueError("only peer nodes fail; clouds are reliable by model")
    moves = []
    for vs in sorted(vss.values(), key=lambda v: v.vs_id):
        if vs.host != failed_peer.node_id:
            continue
        backup = bvs_map.get(vs.vs_id)
        if backup is None:
            raise CorruptionError(f"peer-hosted VS {vs.vs_id:x} has no backup replica")
        if nodes is not None and not nodes[backup.cloud_id].is_cloud:
            raise CorruptionError(f"backup of VS {vs.vs_id:x} is not on a cloud node")
        vs.state = dict(backup.snapshot)
        vs.host = backup.cloud_id
        vs.backed_up = True
        vs.migrating_from = vs.migrating_until = None
        del bvs_map[vs.vs_id]
        moves.append((vs.vs_id, failed_peer.node_id, backup.cloud_id))
    return moves


class Dht:
    """All VSs of the ring plus the nodes hosting them."""

    def __init__(self, vs_count):
        self.vss = partition_ring(vs_count)
        self.by_id = {vs.vs_id: vs for vs in self.vss}
        self.starts = [vs.start for vs in self.vss]
        self.vs_count = vs_count
        self.entity_vs = {}
        build_routing_tables(self.vss)

    def lookup(self, dht_id):
        return self.vss[bisect.bisect_right(self.starts, dht_id % RING_SIZE) - 1]

    def insert(self, uid, dht_id):
        vs = self.lookup(dht_id)
        vs.entities.add(uid)
        self.entity_vs[uid] = vs.vs_id
        return vs

    def remove(self, uid):
        vs_id = self.entity_vs.pop(uid)
        self.by_id[vs_id].entities.discard(uid)

    def check_partition(self):
        if self.vss[0].start != 0:
            raise CorruptionError("ring does not start at 0")
        for a, b in zip(self.vss, self.vss[1:] + self.vss[:1]):
            if a.end != b.start:
                raise CorruptionError(f"gap or overlap between {a.vs_id:x} and {b.vs_id:x}")

    def entity_multiset(self):
        out = []
        for vs in self.vss:
            out.extend(vs.entities)
        return sorted(out)


def write_migration_log(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step_started", "vs_id", "src", "dst", "bytes", "mt_seconds"])
        for r in records:
            w.writerow([r.step_started, f"{r.vs_id:040x}", r.src, r.dst, r.payload_bytes, f"{r.sampled_mt_seconds:.6f}"])

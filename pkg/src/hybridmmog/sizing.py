"""How big a virtual server can get before migrating it takes too long."""

from importlib import resources

import numpy as np

from . import vsdht, workload
from .entities import DESCRIPTOR_BYTES

KING_LIKE_RTT = "king_like_rtt.txt"
PAYLOADS_KB = (2, 4, 8, 16)


def king_like_rtt_path():
    """Path of the shipped RTT sample (milliseconds, one per line)."""
    return str(resources.files("hybridmmog") / "data" / KING_LIKE_RTT)


def fraction_under(payload_bytes, rtt_model, rng, n=10_000, limit=1.0):
    """Share of ``n`` sampled migrations of ``payload_bytes`` finishing within ``limit`` seconds."""
    mt = vsdht.sample_migration_time(payload_bytes, rtt_model, rng, size=n)
    return float(np.mean(mt < limit))


def migration_table(rtt_model, rng, payloads_kb=PAYLOADS_KB, n=10_000, limit=1.0):
    """{payload KB: fraction under ``limit``}; 1 KB = 1024 bytes."""
    return {kb: fraction_under(kb * 1024, rtt_model, rng, n, limit) for kb in payloads_kb}


def vs_payload_bytes(n_entities, n_clients, vs_count=10_000):
    """Descriptors, access list and routing table of one VS."""
    return (
        DESCRIPTOR_BYTES * n_entities
        + vsdht.ACCESS_ENTRY_BYTES * n_clients
        + vsdht.ROUTING_ENTRY_BYTES * vsdht.routing_table_length(vs_count)
    )


def migration_quantile(n_entities, rtt_model, rng, n=10_000, q=95, vs_count=10_000, p_max=1000):
    """q-th percentile migration time of a VS holding ``n_entities`` entities.

    Each entity brings its own clients, drawn from the power-law client model.
    """
    clients = workload.sample_client_counts(rng, (n, n_entities), p_max).sum(axis=1)
    payload = vs_payload_bytes(n_entities, clients, vs_count)
    segments = np.ceil(payload / vsdht.MSS_BYTES)
    rounds = np.log2(segments / vsdht.INITIAL_WINDOW + 1.0) / (1.0 - rtt_model.loss_prob)
    mt = rtt_model.draw_seconds(rng, n) * (vsdht.HANDSHAKE_RTTS + rounds)
    return float(np.percentile(mt, q))


def max_entities_under(rtt_model, rng, limit=1.0, q=95, n=10_000, k_max=60, **kw):
    """Largest entity count whose q-th percentile migration time stays below ``limit``.

    Returns 0 if even a single entity is too slow.
    """
    best = 0
    for k in range(1, k_max + 1):
        if migration_quantile(k, rtt_model, rng, n, q, **kw) < limit:
            best = k
    return best

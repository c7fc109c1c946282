"""Entity descriptors stored in the DHT and their content hash."""

import hashlib
import struct
from dataclasses import dataclass, field

RING_BITS = 160
RING_SIZE = 1 << RING_BITS

# Accounting size of one descriptor on the wire: uid, dht id, position and
# ten (key, value) attribute pairs, rounded the way the sizing model does.
DESCRIPTOR_BYTES = 140
N_ATTRIBUTES = 10


@dataclass
class EntityDescriptor:
    uid: int
    position: tuple
    attributes: tuple = ()
    has_think: bool = False
    dht_id: int = field(default=None)

    def __post_init__(self):
        if len(self.attributes) != N_ATTRIBUTES:
            raise ValueError(f"descriptor needs exactly {N_ATTRIBUTES} attributes, got {len(self.attributes)}")
        if self.dht_id is None:
            self.dht_id = content_id(self)

    def initial_content(self):
        """Canonical big-endian serialization of the creation-time content."""
        x, y = self.position
        parts = [struct.pack(">I", self.uid & 0xFFFFFFFF), struct.pack(">ff", float(x), float(y))]
        for key, value in self.attributes:
            parts.append(struct.pack(">Iq", key & 0xFFFFFFFF, value))
        parts.append(b"\x01" if self.has_think else b"\x00")
        return b"".join(parts)


def content_id(descriptor):
    return int.from_bytes(hashlib.sha1(descriptor.initial_content()).digest(), "big")


def random_attributes(rng):
    keys = rng.integers(0, 1 << 32, size=N_ATTRIBUTES, dtype="uint64")
    values = rng.integers(-(1 << 62), 1 << 62, size=N_ATTRIBUTES, dtype="int64")
    return tuple((int(k), int(v)) for k, v in zip(keys, values))

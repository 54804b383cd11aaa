"""Keyed, counter-based random streams.

Every stream is a Philox generator whose 128-bit key is a hash of a
:class:`StreamKey`.  Philox is counter based, so a stream is a pure function of
its key and the ``i``-th variate never depends on what other streams did or on
which thread produced it.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


class Role(enum.IntEnum):
    DRAW = 0
    REINFORCEMENT = 1
    BRANCH = 2


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    replication_id: int = 0
    role: Role = Role.DRAW
    branch_id: int = 0

    def __post_init__(self):
        if self.replication_id < 0 or self.branch_id < 0:
            raise ValueError("replication_id and branch_id must be >= 0")
        if not -(1 << 63) <= self.master_seed <= _MASK64:
            raise ValueError("master_seed must fit in 64 bits")
        object.__setattr__(self, "role", Role(self.role))

    def with_role(self, role, branch_id=0):
        return StreamKey(self.master_seed, self.replication_id, Role(role), branch_id)

    def philox_key(self):
        packed = struct.pack(
            "<4Q",
            self.master_seed & _MASK64,
            self.replication_id & _MASK64,
            int(self.role),
            self.branch_id & _MASK64,
        )
        digest = hashlib.blake2b(packed, digest_size=16, person=b"urnclt-stream").digest()
        return np.frombuffer(digest, dtype="<u8").astype(np.uint64)


def derive_stream(key: StreamKey) -> np.random.Generator:
    """Return a fresh generator for ``key``; equal keys give identical variates."""
    return np.random.Generator(np.random.Philox(key=key.philox_key()))

"""Kademlia ID space and k-bucket routing table.

Node IDs and content keys share one 256-bit ID space: a node's ID is the
SHA-256 digest of its public key, a key is the SHA-256 digest of the data
item. Closeness is the bitwise XOR of two IDs taken as an integer.

The routing table partitions known peers into buckets by the length of the
common bit-prefix shared with the local ID (bucket i holds peers at CPL i,
equivalently XOR distance in [2^(255-i), 2^(256-i))). Buckets hold at most
k = 20 entries and are unfolded lazily, on the first insertion that targets
them. A peer arriving at a full bucket is rejected outright: there is no
ping-the-oldest eviction and no replacement buffer. Entries leave a bucket
only when the underlying connection is torn down.
"""

from __future__ import annotations

import hashlib
import random
from collections.abc import Iterator

ID_BITS = 256
ID_SPACE = 1 << ID_BITS
BUCKET_CAPACITY = 20

# Node IDs, keys and XOR distances are plain unsigned ints in [0, 2^256).
NodeId = int
Key = int
Distance = int


def digest(data: bytes) -> int:
    """SHA-256 of ``data`` as a 256-bit big-endian integer."""
    return int.from_bytes(hashlib.sha256(data).digest(), "big")


def id_to_hex(node_id: int) -> str:
    """Fixed-width (64 char) lowercase hex form of an ID."""
    return format(node_id, "064x")


def hex_to_id(text: str) -> int:
    value = int(text, 16)
    if not 0 <= value < ID_SPACE:
        raise ValueError(f"ID out of range: {text!r}")
    return value


def xor_distance(a: int, b: int) -> int:
    """XOR metric: 0 iff a == b, symmetric, unidirectional per target."""
    return a ^ b


def common_prefix_length(a: int, b: int) -> int:
    """Number of leading bits shared by two 256-bit IDs (256 iff equal)."""
    return ID_BITS - (a ^ b).bit_length()


def target_with_cpl(base: int, cpl: int, rng: random.Random) -> int:
    """Random ID sharing exactly ``cpl`` leading bits with ``base``.

    Copies the top ``cpl`` bits of ``base``, flips bit ``cpl`` and fills the
    remainder with random bits, so the common prefix length is exact.
    """
    if not 0 <= cpl < ID_BITS:
        raise ValueError(f"cpl must be in [0, {ID_BITS}), got {cpl}")
    tail_bits = ID_BITS - cpl - 1
    prefix = base >> (tail_bits + 1)
    flipped = ((base >> tail_bits) & 1) ^ 1
    tail = rng.getrandbits(tail_bits) if tail_bits else 0
    return (prefix << (tail_bits + 1)) | (flipped << tail_bits) | tail


class RoutingTable:
    """Lazily unfolded k-bucket table for one local node.

    Buckets are keyed by common prefix length and created on first use.
    Within a bucket, entries keep insertion order; there is no recency
    reordering. The table never contains the local ID and never holds a
    peer in more than one bucket (the bucket index is a function of the
    peer ID).
    """

    __slots__ = ("local_id", "k", "_buckets", "_size")

    def __init__(self, local_id: int, k: int = BUCKET_CAPACITY):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.local_id = local_id
        self.k = k
        self._buckets: dict[int, list[int]] = {}
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __contains__(self, peer: int) -> bool:
        bucket = self._buckets.get(common_prefix_length(self.local_id, peer))
        return bucket is not None and peer in bucket

    def entries(self) -> Iterator[int]:
        """All peers currently stored, bucket by bucket."""
        for bucket in self._buckets.values():
            yield from bucket

    def bucket_sizes(self) -> dict[int, int]:
        """Occupancy per unfolded bucket index (CPL)."""
        return {idx: len(bucket) for idx, bucket in self._buckets.items()}

    def insert(self, peer: int) -> bool:
        """Try to store a peer; True if stored (or already present).

        A full target bucket rejects the newcomer without pinging or
        evicting anything. Inserting the local ID is a caller bug.
        """
        if peer == self.local_id:
            raise ValueError("cannot insert the local node into its own table")
        idx = common_prefix_length(self.local_id, peer)
        bucket = self._buckets.get(idx)
        if bucket is None:
            self._buckets[idx] = [peer]
            self._size += 1
            return True
        if peer in bucket:
            return True
        if len(bucket) >= self.k:
            return False
        bucket.append(peer)
        self._size += 1
        return True

    def remove(self, peer: int) -> bool:
        """Drop a peer if present; True if something was removed."""
        idx = common_prefix_length(self.local_id, peer)
        bucket = self._buckets.get(idx)
        if bucket is None or peer not in bucket:
            return False
        bucket.remove(peer)
        self._size -= 1
        if not bucket:
            del self._buckets[idx]
        return True

    def closest_nodes(self, target: int, count: int | None = None) -> list[int]:
        """The ``count`` stored peers nearest to ``target``, nearest first.

        Equivalent to sorting every entry by XOR distance to the target,
        but only materializes the few buckets that can contribute: for a
        target at CPL c from the local ID, bucket c is strictly nearest,
        all deeper buckets come next as one group, then buckets c-1 down
        to 0 in order. Group distance ranges are disjoint, so gathering
        stops as soon as enough candidates are collected.
        """
        if count is None:
            count = self.k
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        buckets = self._buckets
        c = common_prefix_length(self.local_id, target)
        got: list[int] = []
        if c >= ID_BITS:
            # Target is the local ID itself: deeper buckets are closer.
            for idx in sorted(buckets, reverse=True):
                got.extend(buckets[idx])
                if len(got) >= count:
                    break
        else:
            own = buckets.get(c)
            if own is not None:
                got.extend(own)
            if len(got) < count:
                for idx, bucket in buckets.items():
                    if idx > c:
                        got.extend(bucket)
            if len(got) < count:
                for idx in range(c - 1, -1, -1):
                    bucket = buckets.get(idx)
                    if bucket is not None:
                        got.extend(bucket)
                        if len(got) >= count:
                            break
        got.sort(key=target.__xor__)
        del got[count:]
        return got

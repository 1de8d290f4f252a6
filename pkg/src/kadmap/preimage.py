"""Hash pre-image table for aiming FindNode queries at chosen buckets.

DHT servers hash the raw FindNode target before comparing it against node
IDs, so a crawler that wants to probe a specific bucket of a specific node
needs a byte string whose digest starts with a chosen bit pattern. This
module brute-forces one pre-image per b-bit prefix (counter-based, so the
table is deterministic and rebuildable) and serves lookups by pattern. The
table is built once and reused for any number of crawls.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

from .dht import ID_BITS

MAGIC = b"KPIT"
FORMAT_VERSION = 1
DEFAULT_PREFIX_BITS = 16
MAX_PREFIX_BITS = 24


class PreimageTable:
    """Complete map from every b-bit prefix to a matching SHA-256 pre-image."""

    __slots__ = ("prefix_bits", "_entries", "candidates_tried")

    def __init__(self, prefix_bits: int, entries: list[bytes], candidates_tried: int = 0):
        if not 1 <= prefix_bits <= MAX_PREFIX_BITS:
            raise ValueError(f"prefix_bits must be in [1, {MAX_PREFIX_BITS}], got {prefix_bits}")
        if len(entries) != 1 << prefix_bits:
            raise ValueError(f"expected {1 << prefix_bits} entries, got {len(entries)}")
        self.prefix_bits = prefix_bits
        self._entries = entries
        self.candidates_tried = candidates_tried

    def __len__(self) -> int:
        return len(self._entries)

    @classmethod
    def build(cls, prefix_bits: int) -> "PreimageTable":
        """Fill every prefix slot by hashing incrementing 8-byte counters.

        First-found-per-pattern with an ascending counter, so the result is
        a pure function of ``prefix_bits``.
        """
        if not 1 <= prefix_bits <= MAX_PREFIX_BITS:
            raise ValueError(f"prefix_bits must be in [1, {MAX_PREFIX_BITS}], got {prefix_bits}")
        total = 1 << prefix_bits
        entries: list[bytes | None] = [None] * total
        remaining = total
        nbytes = (prefix_bits + 7) // 8
        shift = nbytes * 8 - prefix_bits
        sha256 = hashlib.sha256
        from_bytes = int.from_bytes
        counter = 0
        while remaining:
            candidate = counter.to_bytes(8, "big")
            pattern = from_bytes(sha256(candidate).digest()[:nbytes], "big") >> shift
            if entries[pattern] is None:
                entries[pattern] = candidate
                remaining -= 1
            counter += 1
        return cls(prefix_bits, entries, candidates_tried=counter)  # type: ignore[arg-type]

    def preimage_for_pattern(self, pattern: int) -> bytes:
        """Bytes whose digest starts with the given b-bit pattern."""
        if not 0 <= pattern < len(self._entries):
            raise ValueError(f"pattern out of range: {pattern}")
        return self._entries[pattern]

    def target_for_cpl(self, node_id: int, cpl: int) -> bytes:
        """Pre-image whose digest shares exactly ``cpl`` leading bits with ``node_id``.

        The pattern copies the node's first ``cpl`` bits and flips bit
        ``cpl``; whatever follows cannot extend the match, so the CPL is
        exact. Only works for ``cpl < prefix_bits``: beyond that the table
        holds no pattern long enough to pin the flipped bit.
        """
        if not 0 <= cpl < self.prefix_bits:
            raise ValueError(
                f"cpl {cpl} outside table range [0, {self.prefix_bits}); "
                f"rebuild with more prefix bits"
            )
        top = (node_id >> (ID_BITS - cpl - 1)) ^ 1
        pattern = top << (self.prefix_bits - cpl - 1)
        return self._entries[pattern]

    def verify(self) -> None:
        """Re-hash every entry; raise if any slot misses its pattern."""
        nbytes = (self.prefix_bits + 7) // 8
        shift = nbytes * 8 - self.prefix_bits
        for pattern, preimage in enumerate(self._entries):
            found = int.from_bytes(hashlib.sha256(preimage).digest()[:nbytes], "big") >> shift
            if found != pattern:
                raise ValueError(
                    f"corrupt table: slot {pattern:#x} holds a pre-image hashing to {found:#x}"
                )

    def save(self, path: str | Path) -> None:
        """Write the on-disk form: KPIT header, then length-prefixed records."""
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("BB", FORMAT_VERSION, self.prefix_bits))
            for preimage in self._entries:
                fh.write(struct.pack("B", len(preimage)))
                fh.write(preimage)

    @classmethod
    def load(cls, path: str | Path) -> "PreimageTable":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise ValueError(f"not a pre-image table (bad magic {magic!r})")
            version, prefix_bits = struct.unpack("BB", fh.read(2))
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported table version {version}")
            entries: list[bytes] = []
            for _ in range(1 << prefix_bits):
                (length,) = struct.unpack("B", fh.read(1))
                preimage = fh.read(length)
                if len(preimage) != length:
                    raise ValueError("truncated pre-image table")
                entries.append(preimage)
        return cls(prefix_bits, entries)

"""Tests for the pre-image table."""

import hashlib
import random

import pytest

from kadmap.dht import ID_BITS, common_prefix_length, digest
from kadmap.preimage import PreimageTable


def leading_bits(data: bytes, bits: int) -> int:
    value = int.from_bytes(hashlib.sha256(data).digest(), "big")
    return value >> (256 - bits)


def test_one_bit_table():
    table = PreimageTable.build(1)
    assert len(table) == 2
    assert leading_bits(table.preimage_for_pattern(0), 1) == 0
    assert leading_bits(table.preimage_for_pattern(1), 1) == 1


def test_table_is_complete_and_verified():
    bits = 10
    table = PreimageTable.build(bits)
    assert len(table) == 1 << bits
    for pattern in range(1 << bits):
        assert leading_bits(table.preimage_for_pattern(pattern), bits) == pattern
    table.verify()  # must not raise


def test_build_is_deterministic():
    a = PreimageTable.build(8)
    b = PreimageTable.build(8)
    assert [a.preimage_for_pattern(p) for p in range(256)] == [
        b.preimage_for_pattern(p) for p in range(256)
    ]


def test_save_load_round_trip(tmp_path, preimage_table_10):
    path = tmp_path / "table.kpit"
    preimage_table_10.save(path)
    loaded = PreimageTable.load(path)
    assert loaded.prefix_bits == preimage_table_10.prefix_bits
    assert [loaded.preimage_for_pattern(p) for p in range(len(loaded))] == [
        preimage_table_10.preimage_for_pattern(p) for p in range(len(preimage_table_10))
    ]
    # Writing again produces a byte-identical file.
    path2 = tmp_path / "table2.kpit"
    loaded.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.kpit"
    path.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(ValueError, match="magic"):
        PreimageTable.load(path)


def test_target_for_cpl_zero_flips_first_bit(preimage_table_10):
    rng = random.Random(20)
    for _ in range(20):
        node_id = rng.getrandbits(ID_BITS)
        raw = preimage_table_10.target_for_cpl(node_id, 0)
        assert common_prefix_length(digest(raw), node_id) == 0


def test_target_for_cpl_rehash_oracle(preimage_table_10):
    rng = random.Random(21)
    for _ in range(300):
        node_id = rng.getrandbits(ID_BITS)
        cpl = rng.randrange(0, preimage_table_10.prefix_bits)
        raw = preimage_table_10.target_for_cpl(node_id, cpl)
        assert common_prefix_length(digest(raw), node_id) == cpl


def test_target_for_cpl_out_of_range(preimage_table_10):
    node_id = digest(b"node")
    with pytest.raises(ValueError, match="prefix bits"):
        preimage_table_10.target_for_cpl(node_id, preimage_table_10.prefix_bits)


def test_table_keyed_by_pattern_only(preimage_table_10):
    # Two node ids sharing their first 8 bits get the same pre-image for
    # any cpl < 8: the lookup depends only on the pattern.
    rng = random.Random(22)
    a = rng.getrandbits(ID_BITS)
    b = (a >> (ID_BITS - 8) << (ID_BITS - 8)) | rng.getrandbits(ID_BITS - 8)
    assert common_prefix_length(a, b) >= 8
    for cpl in range(5, 8):
        assert preimage_table_10.target_for_cpl(a, cpl) == preimage_table_10.target_for_cpl(b, cpl)

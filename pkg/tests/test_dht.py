"""Tests for the XOR metric and the k-bucket routing table."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kadmap.dht import (
    ID_BITS,
    ID_SPACE,
    RoutingTable,
    common_prefix_length,
    digest,
    hex_to_id,
    id_to_hex,
    target_with_cpl,
    xor_distance,
)

ids = st.integers(min_value=0, max_value=ID_SPACE - 1)


# ===== XOR distance =====


def test_xor_distance_identity():
    rng = random.Random(1)
    for _ in range(50):
        a = rng.getrandbits(ID_BITS)
        assert xor_distance(a, a) == 0


def test_xor_distance_bitwise_definition():
    # 0b0101... vs 0b0011... in the top nibble -> 0b0110...
    a = 0b0101 << (ID_BITS - 4)
    b = 0b0011 << (ID_BITS - 4)
    assert xor_distance(a, b) == 0b0110 << (ID_BITS - 4)


def test_xor_distance_symmetry_random_pairs():
    rng = random.Random(2)
    for _ in range(1000):
        a, b = rng.getrandbits(ID_BITS), rng.getrandbits(ID_BITS)
        assert xor_distance(a, b) == xor_distance(b, a)


@given(ids, ids)
def test_xor_distance_zero_iff_equal(a, b):
    assert (xor_distance(a, b) == 0) == (a == b)


# ===== common prefix length =====


def test_cpl_equal_ids():
    a = digest(b"anything")
    assert common_prefix_length(a, a) == ID_BITS


def test_cpl_first_bit_differs():
    a = 1 << (ID_BITS - 1)
    b = 0
    assert common_prefix_length(a, b) == 0


def test_cpl_matches_bit_scan_oracle():
    # cpl = 255 - floor(log2(xor)) for unequal ids
    rng = random.Random(3)
    for _ in range(500):
        a, b = rng.getrandbits(ID_BITS), rng.getrandbits(ID_BITS)
        if a == b:
            continue
        expected = (ID_BITS - 1) - int(math.floor(math.log2(xor_distance(a, b))))
        assert common_prefix_length(a, b) == expected


@given(ids, st.integers(min_value=0, max_value=ID_BITS - 1), st.integers())
def test_target_with_cpl_is_exact(base, cpl, seed):
    target = target_with_cpl(base, cpl, random.Random(seed))
    assert common_prefix_length(base, target) == cpl


def test_hex_round_trip():
    rng = random.Random(4)
    for _ in range(20):
        a = rng.getrandbits(ID_BITS)
        text = id_to_hex(a)
        assert len(text) == 64
        assert hex_to_id(text) == a


# ===== routing table: insert/remove =====


def make_peer(local: int, cpl: int, rng: random.Random) -> int:
    return target_with_cpl(local, cpl, rng)


def test_insert_into_empty_table():
    rng = random.Random(5)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    peer = rng.getrandbits(ID_BITS)
    assert table.insert(peer) is True
    assert len(table) == 1
    assert peer in table


def test_full_bucket_rejects_without_eviction():
    rng = random.Random(6)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    peers = []
    while len(peers) < 20:
        p = make_peer(local, 3, rng)
        if p not in peers:
            peers.append(p)
    for p in peers:
        assert table.insert(p) is True
    before = list(table.entries())
    late = make_peer(local, 3, rng)
    assert late not in peers
    assert table.insert(late) is False
    assert list(table.entries()) == before  # no ping, no eviction, no reorder
    assert late not in table


def test_insert_remove_insert_round_trip():
    rng = random.Random(7)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    peer = rng.getrandbits(ID_BITS)
    assert table.insert(peer) is True
    assert table.remove(peer) is True
    assert table.insert(peer) is True
    assert peer in table


def test_remove_unknown_peer_is_absent():
    rng = random.Random(8)
    table = RoutingTable(rng.getrandbits(ID_BITS))
    assert table.remove(rng.getrandbits(ID_BITS)) is False


def test_removed_peer_never_in_closest_nodes():
    rng = random.Random(9)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    peers = [rng.getrandbits(ID_BITS) for _ in range(30)]
    for p in peers:
        table.insert(p)
    victim = peers[12]
    table.remove(victim)
    for _ in range(20):
        target = rng.getrandbits(ID_BITS)
        assert victim not in table.closest_nodes(target, 30)


def test_insert_self_is_an_error():
    local = digest(b"self")
    table = RoutingTable(local)
    with pytest.raises(ValueError):
        table.insert(local)


def test_reinsert_present_peer_is_accepted_noop():
    rng = random.Random(10)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    peer = rng.getrandbits(ID_BITS)
    table.insert(peer)
    assert table.insert(peer) is True
    assert len(table) == 1


def test_bucket_index_equals_cpl():
    rng = random.Random(11)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    for cpl in (0, 1, 5, 17):
        for _ in range(3):
            table.insert(make_peer(local, cpl, rng))
    for idx, size in table.bucket_sizes().items():
        assert size <= 20
    sizes = table.bucket_sizes()
    assert set(sizes) == {0, 1, 5, 17}
    assert all(s == 3 for s in sizes.values())


@settings(max_examples=50)
@given(st.integers(), st.integers(min_value=1, max_value=60))
def test_buckets_never_exceed_capacity(seed, n_peers):
    rng = random.Random(seed)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    for _ in range(n_peers):
        table.insert(rng.getrandbits(ID_BITS))
    assert all(size <= 20 for size in table.bucket_sizes().values())
    assert len(table) == len(set(table.entries()))


# ===== closest_nodes =====


def test_closest_nodes_single_peer():
    rng = random.Random(12)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    peer = rng.getrandbits(ID_BITS)
    table.insert(peer)
    assert table.closest_nodes(rng.getrandbits(ID_BITS), 20) == [peer]


def test_closest_nodes_returns_all_when_small():
    rng = random.Random(13)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    peers = {rng.getrandbits(ID_BITS) for _ in range(5)}
    for p in peers:
        table.insert(p)
    result = table.closest_nodes(rng.getrandbits(ID_BITS), 20)
    assert set(result) == peers


def test_closest_nodes_empty_table():
    table = RoutingTable(digest(b"x"))
    assert table.closest_nodes(digest(b"y"), 20) == []


def test_closest_nodes_matches_brute_force_sort():
    # Exhaustive-sort oracle over random tables and targets, including
    # targets crafted to hit specific buckets and the local ID itself.
    rng = random.Random(14)
    for trial in range(100):
        local = rng.getrandbits(ID_BITS)
        table = RoutingTable(local)
        n = rng.randrange(1, 120)
        for _ in range(n):
            if rng.random() < 0.5:
                table.insert(make_peer(local, rng.randrange(0, 14), rng))
            else:
                table.insert(rng.getrandbits(ID_BITS))
        entries = list(table.entries())
        if rng.random() < 0.2:
            target = local
        elif rng.random() < 0.5:
            target = make_peer(local, rng.randrange(0, 18), rng)
        else:
            target = rng.getrandbits(ID_BITS)
        count = rng.choice([1, 3, 20, 50])
        expected = sorted(entries, key=lambda p: p ^ target)[:count]
        assert table.closest_nodes(target, count) == expected


def test_closest_nodes_output_is_sorted_by_distance():
    rng = random.Random(15)
    local = rng.getrandbits(ID_BITS)
    table = RoutingTable(local)
    for _ in range(80):
        table.insert(rng.getrandbits(ID_BITS))
    target = rng.getrandbits(ID_BITS)
    result = table.closest_nodes(target, 40)
    dists = [p ^ target for p in result]
    assert dists == sorted(dists)
    assert len(set(result)) == len(result)

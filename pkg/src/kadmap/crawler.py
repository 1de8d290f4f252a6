"""Crawler for the simulated overlay.

A crawl breadth-first enumerates every node reachable in bucket space:
starting from the bootstrap peers, each discovered node is swept with
FindNode queries whose pre-image targets walk the common prefix lengths
upward; the sweep stops once a response teaches us nothing new. The
crawler presents itself as a client with a fresh keypair per crawl, so
crawled nodes never store it in their buckets.

Snapshots record every discovered node with a reachability flag (we also
learn about nodes we cannot connect to, because they sit in reachable
nodes' buckets) and one directed edge per reported bucket entry.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean

from .dht import digest, hex_to_id, id_to_hex
from .preimage import PreimageTable
from .simnet import PRIVATE, SimWorld


def derive_seed(master: int, label: str) -> int:
    """Stable per-subsystem seed derived from one master seed."""
    return digest(f"{master}:{label}".encode()) & ((1 << 64) - 1)


@dataclass
class CrawlRunConfig:
    preimage_table: PreimageTable
    bootstrap_peers: list[int] | None = None
    max_parallel_rpcs: int = 16
    per_node_timeout: float = 1.0
    # The sweep stops after this many consecutive responses without a new
    # neighbor. 1 matches the plain stop rule; 2 guards against bucket
    # updates interleaving with the sweep on a churning network.
    no_new_strikes: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_parallel_rpcs < 1:
            raise ValueError("max_parallel_rpcs must be >= 1")
        if self.no_new_strikes < 1:
            raise ValueError("no_new_strikes must be >= 1")


@dataclass
class CrawlSnapshot:
    crawl_id: str
    started_at: float
    finished_at: float
    nodes: dict[int, bool] = field(default_factory=dict)  # id -> reachable
    edges: set[tuple[int, int]] = field(default_factory=set)
    failed: bool = False
    crawler_identity: int = 0

    @property
    def reachable_count(self) -> int:
        return sum(1 for r in self.nodes.values() if r)


def crawl_node(
    world: SimWorld, config: CrawlRunConfig, peer_id: int
) -> tuple[set[int], bool]:
    """Sweep one peer's buckets; returns (reported neighbors, reachable).

    Reachable means at least one FindNode exchange completed. Private or
    offline peers time out without an exchange.
    """
    table = config.preimage_table
    rpc_cost = world.config.rpc_latency / config.max_parallel_rpcs
    peer = world.nodes.get(peer_id)
    if peer is None or not peer.online or not peer.is_server or peer.reachability == PRIVATE:
        world.advance(config.per_node_timeout / config.max_parallel_rpcs)
        return set(), False
    neighbors: set[int] = set()
    responded = False
    strikes = config.no_new_strikes
    for cpl in range(table.prefix_bits):
        raw = table.target_for_cpl(peer_id, cpl)
        world.advance(rpc_cost)
        response = world.handle_find_node(peer_id, raw)
        if response is None:  # peer went away mid-sweep
            break
        responded = True
        new = [v for v in response if v not in neighbors]
        if new:
            neighbors.update(new)
            strikes = config.no_new_strikes
        else:
            strikes -= 1
            if strikes <= 0:
                break
    return neighbors, responded


def run_crawl(world: SimWorld, config: CrawlRunConfig, crawl_seq: int = 0) -> CrawlSnapshot:
    """One full crawl: BFS from the bootstrap peers, each node crawled once.

    Every reported neighbor joins the frontier, so unreachable nodes still
    end up in the snapshot (reachable=False) when someone's buckets name
    them. The crawler identity is regenerated per crawl and never enters
    the world's state.
    """
    rng = random.Random(derive_seed(config.seed, f"crawl-{crawl_seq}"))
    crawler_identity = digest(rng.randbytes(32))
    bootstrap = config.bootstrap_peers if config.bootstrap_peers else world.bootnodes
    if not bootstrap:
        raise ValueError("no bootstrap peers configured")
    snapshot = CrawlSnapshot(
        crawl_id=f"crawl-{crawl_seq:04d}",
        started_at=world.clock,
        finished_at=world.clock,
        crawler_identity=crawler_identity,
    )
    frontier: deque[int] = deque(sorted(bootstrap))
    visited: set[int] = set()
    while frontier:
        u = frontier.popleft()
        if u in visited:
            continue
        visited.add(u)
        neighbors, reachable = crawl_node(world, config, u)
        snapshot.nodes[u] = reachable
        for v in sorted(neighbors):
            snapshot.edges.add((u, v))
            if v not in visited:
                frontier.append(v)
    snapshot.finished_at = world.clock
    snapshot.failed = not any(snapshot.nodes.values())
    return snapshot


def repeated_crawls(world: SimWorld, config: CrawlRunConfig, count: int) -> list[CrawlSnapshot]:
    """Back-to-back crawls; each starts the moment the previous finishes.

    The world clock advances while crawling, so scheduled churn keeps
    happening between (and during) snapshots.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    return [run_crawl(world, config, seq) for seq in range(count)]


# -- session tables ------------------------------------------------------


@dataclass
class SessionTable:
    """Per-node observed uptime intervals, derived from crawl snapshots."""

    intervals: dict[int, list[tuple[float, float]]]

    def lengths(self) -> list[float]:
        return [hi - lo for spans in self.intervals.values() for lo, hi in spans]

    def session_count(self) -> int:
        return sum(len(spans) for spans in self.intervals.values())


def build_session_table(snapshots: list[CrawlSnapshot]) -> SessionTable:
    """Sessions = maximal runs of consecutive snapshots with the node
    reachable.

    A session's length is the span between the first and last reachable
    snapshot starts plus one inter-crawl interval (the interval right
    after the run; the mean interval when the run touches the final
    snapshot), reflecting that the node stayed up for some unknown part
    of the gap in which it disappeared.
    """
    if len(snapshots) < 2:
        raise ValueError("need at least 2 snapshots to build sessions")
    starts = [s.started_at for s in snapshots]
    gaps = [b - a for a, b in zip(starts, starts[1:])]
    tail_gap = mean(gaps)
    intervals: dict[int, list[tuple[float, float]]] = {}
    open_runs: dict[int, int] = {}  # node -> index of first reachable snapshot

    def close(node: int, first: int, last: int) -> None:
        end = starts[last] + (gaps[last] if last < len(gaps) else tail_gap)
        intervals.setdefault(node, []).append((starts[first], end))

    for idx, snap in enumerate(snapshots):
        reachable_now = {nid for nid, ok in snap.nodes.items() if ok}
        for node in list(open_runs):
            if node not in reachable_now:
                close(node, open_runs.pop(node), idx - 1)
        for node in reachable_now:
            open_runs.setdefault(node, idx)
    for node, first in open_runs.items():
        close(node, first, len(snapshots) - 1)
    return SessionTable(intervals)


# -- snapshot files --------------------------------------------------------


def save_snapshot(snapshot: CrawlSnapshot, path: str | Path) -> None:
    """Text form: one header line, then N node lines and E edge lines."""
    lines = [f"{snapshot.crawl_id} {snapshot.started_at:.6f} {snapshot.finished_at:.6f}"]
    lines += sorted(f"N {id_to_hex(nid)} {int(ok)}" for nid, ok in snapshot.nodes.items())
    lines += sorted(f"E {id_to_hex(a)} {id_to_hex(b)}" for a, b in snapshot.edges)
    Path(path).write_text("\n".join(lines) + "\n")


def load_snapshot(path: str | Path) -> CrawlSnapshot:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ValueError(f"empty snapshot file {path}")
    crawl_id, started, finished = text[0].split()
    snapshot = CrawlSnapshot(crawl_id, float(started), float(finished))
    for line in text[1:]:
        if not line.strip():
            continue
        kind, *rest = line.split()
        if kind == "N":
            snapshot.nodes[hex_to_id(rest[0])] = rest[1] == "1"
        elif kind == "E":
            snapshot.edges.add((hex_to_id(rest[0]), hex_to_id(rest[1])))
        else:
            raise ValueError(f"bad snapshot line: {line!r}")
    snapshot.failed = not any(snapshot.nodes.values())
    return snapshot


def save_snapshots(snapshots: list[CrawlSnapshot], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, snap in enumerate(snapshots):
        path = out / f"crawl_{i:04d}.txt"
        save_snapshot(snap, path)
        paths.append(path)
    return paths


def load_snapshots(in_dir: str | Path) -> list[CrawlSnapshot]:
    paths = sorted(Path(in_dir).glob("crawl_*.txt"))
    return [load_snapshot(p) for p in paths]

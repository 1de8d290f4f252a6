"""Statistics over crawl snapshots and ground-truth graphs.

Everything here is a pure function of its inputs: bucket-occupancy
prediction, degree statistics and distributions, bucket/overlay edge
coverage, inverse-cumulative session tables, node counts over time and
the persistence of top-degree nodes across crawls.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .crawler import CrawlSnapshot
from .simnet import GroundTruth

# Thresholds for session tables: 5 min, 10 min, 30 min, 1 h, 1 d, 6 d.
DEFAULT_SESSION_THRESHOLDS = (300.0, 600.0, 1800.0, 3600.0, 86400.0, 518400.0)

BUCKET_CAP = 20


def expected_bucket_entries(n: int, k: int = BUCKET_CAP, bits: int = 256) -> float:
    """Expected routing-table size for a population of n servers.

    Bucket i is responsible for a 2^-i slice of the ID space and holds at
    most k entries, so the expectation is sum_{i=1..bits} min(k, n * 2^-i).
    Nondecreasing in n and bounded by min(n, k * bits).
    """
    if n < 0:
        raise ValueError("population must be >= 0")
    total = 0.0
    for i in range(1, bits + 1):
        expected = n * 2.0 ** -i
        total += k if expected > k else expected
        if expected <= 0.0:
            break
    return total


@dataclass(frozen=True)
class DegreeSummary:
    min: float
    mean: float
    median: float
    max: float


@dataclass(frozen=True)
class DegreeStats:
    in_degree: DegreeSummary
    out_degree: DegreeSummary
    total_degree: DegreeSummary


def node_degrees(snapshot: CrawlSnapshot) -> dict[int, tuple[int, int]]:
    """Per node (in, out) over the directed deduplicated edge set."""
    in_c: Counter[int] = Counter()
    out_c: Counter[int] = Counter()
    for src, dst in snapshot.edges:
        out_c[src] += 1
        in_c[dst] += 1
    return {nid: (in_c.get(nid, 0), out_c.get(nid, 0)) for nid in snapshot.nodes}


def _summary(values: list[int]) -> DegreeSummary:
    arr = np.asarray(values, dtype=float)
    return DegreeSummary(float(arr.min()), float(arr.mean()), float(np.median(arr)), float(arr.max()))


def degree_stats(snapshot: CrawlSnapshot) -> DegreeStats:
    """Min/mean/median/max of in-, out- and total degree over all nodes.

    Total degree counts each direction separately, so a reciprocated link
    contributes 2.
    """
    if not snapshot.nodes:
        raise ValueError("empty snapshot")
    degrees = node_degrees(snapshot)
    ins = [d[0] for d in degrees.values()]
    outs = [d[1] for d in degrees.values()]
    totals = [i + o for i, o in zip(ins, outs)]
    return DegreeStats(_summary(ins), _summary(outs), _summary(totals))


def degree_distribution(
    snapshot: CrawlSnapshot, kind: str = "in", reachable_only: bool = False
) -> dict[int, int]:
    """Histogram degree -> node count over the chosen degree kind."""
    if kind not in ("in", "out", "total"):
        raise ValueError(f"kind must be in/out/total, got {kind!r}")
    degrees = node_degrees(snapshot)
    hist: Counter[int] = Counter()
    for nid, (d_in, d_out) in degrees.items():
        if reachable_only and not snapshot.nodes[nid]:
            continue
        value = d_in if kind == "in" else d_out if kind == "out" else d_in + d_out
        hist[value] += 1
    return dict(hist)


def loglog_slope(hist: dict[int, int]) -> float:
    """Least-squares slope of log(count) vs log(degree), zero bins skipped.

    A clearly negative slope is the qualitative heavy-tail signature.
    """
    xs = [math.log(d) for d, c in sorted(hist.items()) if d > 0 and c > 0]
    ys = [math.log(c) for d, c in sorted(hist.items()) if d > 0 and c > 0]
    if len(xs) < 2:
        raise ValueError("need at least two non-empty bins")
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


def bucket_coverage(gt: GroundTruth) -> float:
    """Share of server-to-server connections reflected in at least one
    bucket: |E' as unordered pairs| / |E|."""
    if gt.g_edge_count == 0:
        raise ValueError("no server-to-server connections; coverage undefined")
    return gt.eprime_pair_count / gt.g_edge_count


def inverse_cumulative_sessions(
    lengths: list[float], thresholds: tuple[float, ...] = DEFAULT_SESSION_THRESHOLDS
) -> list[tuple[float, int, float]]:
    """Rows of (threshold, sessions strictly longer, percentage of all)."""
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    total = len(lengths)
    rows = []
    for t in thresholds:
        count = sum(1 for length in lengths if length > t)
        pct = 100.0 * count / total if total else 0.0
        rows.append((t, count, pct))
    return rows


def nodes_over_time(snapshots: list[CrawlSnapshot]) -> list[tuple[float, int, int]]:
    """(start time, all nodes, reachable nodes) per snapshot."""
    return [(s.started_at, len(s.nodes), s.reachable_count) for s in snapshots]


def ecdf(values: list[float]) -> list[tuple[float, float]]:
    """Empirical CDF as (x, fraction <= x) points at distinct values."""
    if not values:
        return []
    out: list[tuple[float, float]] = []
    n = len(values)
    seen = 0
    for x, c in sorted(Counter(values).items()):
        seen += c
        out.append((x, seen / n))
    return out


def top_degree_persistence(
    snapshots: list[CrawlSnapshot], fraction: float = 0.0005
) -> list[tuple[float, float]]:
    """ECDF of how persistently nodes sit in the top-degree set.

    Per snapshot, the ceil(fraction * |nodes|) nodes with the highest
    total degree are selected (ties broken by ID for determinism). Each
    node ever selected gets an appearance share = selections / number of
    snapshots; the result is the ECDF over those shares.
    """
    if not snapshots:
        raise ValueError("need at least one snapshot")
    selections: Counter[int] = Counter()
    for snap in snapshots:
        if not snap.nodes:
            continue
        m = math.ceil(fraction * len(snap.nodes))
        degrees = node_degrees(snap)
        ranked = sorted(degrees.items(), key=lambda kv: (-(kv[1][0] + kv[1][1]), kv[0]))
        for nid, _ in ranked[:m]:
            selections[nid] += 1
    shares = [count / len(snapshots) for count in selections.values()]
    return ecdf(shares)


# -- report formatting ---------------------------------------------------


def aligned_table(headers: list[str], rows: list[list[str]]) -> str:
    """Space-padded text table with a dashed header rule."""
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines)


def write_csv(path: str | Path, headers: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


def write_xy(path: str | Path, pairs: list[tuple], header: str = "x,y") -> None:
    """Plot-ready two-column CSV."""
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for x, y in pairs:
            fh.write(f"{x},{y}\n")


def format_degree_stats(stats: DegreeStats) -> str:
    rows = []
    for name, s in (
        ("total-degree", stats.total_degree),
        ("in-degree", stats.in_degree),
        ("out-degree", stats.out_degree),
    ):
        rows.append([name, f"{s.min:g}", f"{s.mean:.2f}", f"{s.median:.2f}", f"{s.max:g}"])
    return aligned_table(["kind", "min", "mean", "median", "max"], rows)


def format_session_table(rows: list[tuple[float, int, float]]) -> str:
    def fmt_threshold(seconds: float) -> str:
        if seconds % 86400 == 0 and seconds >= 86400:
            return f"{int(seconds // 86400)} d"
        if seconds % 3600 == 0 and seconds >= 3600:
            return f"{int(seconds // 3600)} h"
        return f"{seconds / 60:g} min"

    body = [[fmt_threshold(t), str(c), f"{p:.4f}"] for t, c, p in rows]
    return aligned_table(["longer than", "sessions", "percent"], body)

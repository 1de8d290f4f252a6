"""Command line entry point: reproducible experiments end to end.

Subcommands: preimage-gen (build the FindNode targeting table), simulate
(build a world and export its ground truth), crawl (build a world and
crawl it repeatedly), analyze (reports from snapshots and/or ground
truth) and scenario-sybil (provider-record overwrite case study).

Every command is deterministic for a fixed seed; a manifest.json with
artifact checksums is written next to the outputs so runs can be
compared. Set KADMAP_LOG=INFO or DEBUG for progress detail.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import analytics
from .crawler import (
    CrawlRunConfig,
    build_session_table,
    derive_seed,
    load_snapshots,
    repeated_crawls,
    save_snapshots,
)
from .dht import digest, id_to_hex
from .preimage import MAX_PREFIX_BITS, PreimageTable
from .scenario import (
    NODES_FILE,
    Scenario,
    ScenarioError,
    build_churn_world,
    build_static_world,
    load_ground_truth,
    load_scenario,
    write_ground_truth,
)
from .simnet import PUBLIC, SERVER, SimWorld

log = logging.getLogger("kadmap")


class CommandError(Exception):
    """Operational failure with a machine-readable category."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def required_prefix_bits(n_servers: int) -> int:
    """Pre-image depth needed to sweep a world of this size: deepest
    plausibly non-empty bucket (log2(N/k)) plus margin."""
    kink = math.ceil(math.log2(max(n_servers, 2) / 20.0))
    return min(MAX_PREFIX_BITS, max(4, kink + 4))


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir: Path, scenario: str, seed: int, config_path: str | None, artifacts: list[Path]
) -> Path:
    manifest = {
        "scenario": scenario,
        "seed": seed,
        "config": config_path,
        "out_dir": str(out_dir),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "artifacts": {p.name: _sha256_file(p) for p in sorted(artifacts)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_scenario_arg(path: str, seed_override: int | None) -> Scenario:
    try:
        scenario = load_scenario(path)
    except ScenarioError as exc:
        raise CommandError("config", str(exc)) from exc
    except OSError as exc:
        raise CommandError("io", str(exc)) from exc
    if seed_override is not None:
        scenario.config.seed = seed_override
    return scenario


# -- commands ------------------------------------------------------------


def cmd_preimage_gen(args: argparse.Namespace) -> int:
    if not 1 <= args.bits <= MAX_PREFIX_BITS:
        raise CommandError("args", f"--bits must be in [1, {MAX_PREFIX_BITS}], got {args.bits}")
    started = time.perf_counter()
    table = PreimageTable.build(args.bits)
    table.verify()
    elapsed = time.perf_counter() - started
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        table.save(out)
    except OSError as exc:
        raise CommandError("io", f"cannot write {out}: {exc}") from exc
    print(
        f"built {len(table)} pre-images ({args.bits} bits) in {elapsed:.2f}s, "
        f"{table.candidates_tried} candidates tried, verified, "
        f"sha256={_sha256_file(out)}"
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = _load_scenario_arg(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if scenario.has_churn:
        world = build_churn_world(scenario.config)
        world.run(scenario.warmup + scenario.duration)
    else:
        world = build_static_world(scenario.config)
    gt = write_ground_truth(world, out)
    n_online = sum(1 for _, (_, _, online) in gt.nodes.items() if online)
    print(
        f"world: {n_online} online nodes, {gt.g_tilde_edge_count} connections, "
        f"{gt.g_edge_count} server-server, {gt.eprime_directed_count} bucket entries"
    )
    artifacts = [p for p in out.iterdir() if p.is_file() and p.name != "manifest.json"]
    write_manifest(out, "simulate", scenario.config.seed, args.config, artifacts)
    return 0


def _build_crawl_world(args: argparse.Namespace) -> tuple[Scenario, SimWorld]:
    if args.world:
        scenario = _load_scenario_arg(args.world, args.seed)
        # Frozen world: churn, if configured, is not scheduled.
        scenario.config.churn = None
        world = build_static_world(scenario.config)
    else:
        scenario = _load_scenario_arg(args.live_sim, args.seed)
        if not scenario.has_churn:
            raise CommandError("config", "--live-sim scenario needs a [churn] section")
        world = build_churn_world(scenario.config)
        world.run(scenario.warmup)
    return scenario, world


def cmd_crawl(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise CommandError("args", "--count must be >= 1")
    try:
        table = PreimageTable.load(args.preimages)
    except (OSError, ValueError) as exc:
        raise CommandError("io", f"cannot load pre-image table: {exc}") from exc
    scenario, world = _build_crawl_world(args)
    needed = required_prefix_bits(scenario.config.n_servers)
    if table.prefix_bits < needed:
        raise CommandError(
            "depth",
            f"pre-image table has {table.prefix_bits} bits but this world needs "
            f"at least {needed}; rerun preimage-gen with --bits {needed}",
        )
    config = CrawlRunConfig(
        preimage_table=table, seed=derive_seed(scenario.config.seed, "crawler")
    )
    snapshots = repeated_crawls(world, config, args.count)
    out = Path(args.out)
    paths = save_snapshots(snapshots, out)
    for snap in snapshots:
        print(
            f"{snap.crawl_id}: {len(snap.nodes)} nodes "
            f"({snap.reachable_count} reachable), {len(snap.edges)} edges"
            + (" [failed]" if snap.failed else "")
        )
    write_manifest(out, "crawl", scenario.config.seed, args.world or args.live_sim, paths)
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise CommandError("io", f"input directory {in_dir} does not exist")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshots = load_snapshots(in_dir)
    gt_dir = Path(args.ground_truth) if args.ground_truth else in_dir
    gt = load_ground_truth(gt_dir) if (gt_dir / NODES_FILE).exists() else None
    if not snapshots and gt is None:
        raise CommandError("input", f"no snapshots or ground truth found under {in_dir}")
    artifacts: list[Path] = []
    summary: list[str] = []

    if snapshots:
        all_stats = [analytics.degree_stats(s) for s in snapshots if s.nodes]
        rows = []
        for kind in ("total_degree", "in_degree", "out_degree"):
            summaries = [getattr(s, kind) for s in all_stats]
            rows.append(
                [
                    kind.replace("_", "-"),
                    f"{sum(x.min for x in summaries) / len(summaries):.2f}",
                    f"{sum(x.mean for x in summaries) / len(summaries):.2f}",
                    f"{sum(x.median for x in summaries) / len(summaries):.2f}",
                    f"{sum(x.max for x in summaries) / len(summaries):.2f}",
                ]
            )
        table_txt = analytics.aligned_table(["kind", "min", "mean", "median", "max"], rows)
        (out / "degree_stats.txt").write_text(
            f"Average degree statistics over {len(all_stats)} crawls\n{table_txt}\n"
        )
        analytics.write_csv(out / "degree_stats.csv", ["kind", "min", "mean", "median", "max"], rows)
        artifacts += [out / "degree_stats.txt", out / "degree_stats.csv"]

        first = snapshots[0]
        for kind in ("in", "out", "total"):
            hist = analytics.degree_distribution(first, kind)
            pairs = sorted(hist.items())
            analytics.write_xy(out / f"degree_hist_{kind}.csv", pairs, header="degree,count")
            artifacts.append(out / f"degree_hist_{kind}.csv")
        hist_r = analytics.degree_distribution(first, "in", reachable_only=True)
        analytics.write_xy(
            out / "degree_hist_in_reachable.csv", sorted(hist_r.items()), header="degree,count"
        )
        artifacts.append(out / "degree_hist_in_reachable.csv")

        series = analytics.nodes_over_time(snapshots)
        analytics.write_csv(
            out / "nodes_over_time.csv",
            ["time", "all", "reachable"],
            [[f"{t:.3f}", a, r] for t, a, r in series],
        )
        artifacts.append(out / "nodes_over_time.csv")
        summary.append(f"snapshots: {len(snapshots)}")
        summary.append(f"nodes in first crawl: {len(first.nodes)} ({first.reachable_count} reachable)")

        if len(snapshots) >= 2:
            sessions = build_session_table(snapshots)
            rows_s = analytics.inverse_cumulative_sessions(sessions.lengths())
            (out / "sessions.txt").write_text(analytics.format_session_table(rows_s) + "\n")
            analytics.write_csv(
                out / "sessions.csv",
                ["threshold_seconds", "sessions_longer", "percent"],
                [[f"{t:g}", c, f"{p:.4f}"] for t, c, p in rows_s],
            )
            artifacts += [out / "sessions.txt", out / "sessions.csv"]
            summary.append(f"sessions observed: {sessions.session_count()}")

        persistence = analytics.top_degree_persistence(snapshots)
        analytics.write_xy(
            out / "top_degree_ecdf.csv", persistence, header="appearance_share,cumulative_fraction"
        )
        artifacts.append(out / "top_degree_ecdf.csv")

    if gt is not None:
        n_servers = sum(
            1 for role, _, online in gt.nodes.values() if online and role == SERVER
        )
        lines = [f"online servers: {n_servers}"]
        if n_servers:
            predicted = analytics.expected_bucket_entries(n_servers)
            measured = gt.eprime_directed_count / n_servers
            ratio = measured / predicted if predicted else float("nan")
            lines += [
                f"predicted mean bucket entries: {predicted:.2f}",
                f"measured mean bucket entries: {measured:.2f}",
                f"measured/predicted: {ratio:.3f}",
            ]
        if gt.g_edge_count:
            lines.append(f"bucket coverage |E'|/|E|: {analytics.bucket_coverage(gt):.4f}")
        (out / "eq3_comparison.txt").write_text("\n".join(lines) + "\n")
        artifacts.append(out / "eq3_comparison.txt")
        summary += lines

    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    artifacts.append(out / "summary.txt")
    write_manifest(out, "analyze", 0, None, artifacts)
    print("\n".join(summary))
    return 0


def cmd_scenario_sybil(args: argparse.Namespace) -> int:
    scenario = _load_scenario_arg(args.config, args.seed)
    scenario.config.churn = None
    world = build_static_world(scenario.config)
    rng = world.rng
    servers = [
        n.id
        for n in world.nodes.values()
        if n.is_server and n.online and n.reachability == PUBLIC
    ]
    if len(servers) < 3:
        raise CommandError("config", "sybil scenario needs at least 3 public servers")
    sybils = [world.spawn_node(SERVER, PUBLIC) for _ in range(args.sybils)]
    for sid in sybils:
        world.node_join(sid)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[list[str]] = []
    failures = 0
    for i in range(args.keys):
        key = digest(f"sybil-trial-item-{i}".encode())
        provider = rng.choice(servers)
        world.publish_provider(provider, key)
        world.flush_ticks()
        pre = world.retrieve(provider, key)  # sanity: the provider can see itself
        world.sybil_overwrite(key, sybils)

        neighbors = [
            pid
            for pid in world.nodes[provider].connections
            if world.nodes[pid].is_server and world.nodes[pid].online
        ]
        origin_near = rng.choice(neighbors)
        far_candidates = [
            s
            for s in servers
            if s != provider and s not in world.nodes[provider].connections
        ]
        origin_far = rng.choice(far_candidates) if far_candidates else None

        near = world.retrieve(origin_near, key)
        far = world.retrieve(origin_far, key) if origin_far is not None else None
        world.flush_ticks()
        rows.append(
            [
                id_to_hex(key)[:12],
                "yes" if pre.success else "no",
                "yes" if near.via_dht else "no",
                "yes" if near.via_broadcast else "no",
                ("yes" if far.success else "no") if far is not None else "-",
            ]
        )
        if near.via_dht or (far is not None and far.via_dht):
            failures += 1

    table_txt = analytics.aligned_table(
        ["key", "pre-overwrite", "dht-after", "broadcast-after", "far-origin"], rows
    )
    report = (
        f"Sybil overwrite scenario: {args.keys} keys, {args.sybils} sybils\n"
        f"{table_txt}\n"
        f"DHT-path retrievals succeeding after overwrite: {failures} (expected 0)\n"
    )
    (out / "sybil_report.txt").write_text(report)
    print(report, end="")
    write_manifest(out, "scenario-sybil", scenario.config.seed, args.config, [out / "sybil_report.txt"])
    return 0


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kadmap",
        description="Kademlia-style overlay simulator, crawler, and analytics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preimage-gen", help="build the FindNode pre-image table")
    p.add_argument("--bits", type=int, required=True, help=f"prefix bits (1..{MAX_PREFIX_BITS})")
    p.add_argument("--out", required=True, help="output table file")
    p.set_defaults(func=cmd_preimage_gen)

    p = sub.add_parser("simulate", help="build a world and export ground truth")
    p.add_argument("--config", required=True, help="scenario file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("crawl", help="crawl a simulated world")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--world", help="scenario file for a frozen (static) world")
    src.add_argument("--live-sim", help="scenario file for a churning world")
    p.add_argument("--preimages", required=True, help="pre-image table file")
    p.add_argument("--count", type=int, default=1, help="number of back-to-back crawls")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_crawl)

    p = sub.add_parser("analyze", help="reports from snapshots and/or ground truth")
    p.add_argument("--in", dest="in_dir", required=True, help="snapshot/ground-truth directory")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--ground-truth", default=None, help="separate ground-truth directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("scenario-sybil", help="provider-record overwrite case study")
    p.add_argument("--config", required=True, help="scenario file")
    p.add_argument("--keys", type=int, default=20, help="number of trial keys")
    p.add_argument("--sybils", type=int, default=10, help="number of sybil identities")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_scenario_sybil)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("KADMAP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except ScenarioError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

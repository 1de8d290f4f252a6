"""Scenario configs, world builders, and ground-truth file I/O.

A scenario is an INI-style key-value file: a [world] section with the
population and protocol knobs, an optional [churn] section (its presence
switches the world to session-based churn) and an optional [run] section
with warmup/duration used by the CLI. Builders are deterministic given
the seed, so a scenario file is a reproducible experiment description.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .dht import id_to_hex
from .simnet import (
    CLIENT,
    DEFAULT_ARRIVAL,
    DEFAULT_INTERSESSION,
    DEFAULT_SESSION,
    PUBLIC,
    SERVER,
    ChurnModel,
    Distribution,
    GroundTruth,
    SimConfig,
    SimWorld,
)


class ScenarioError(ValueError):
    """Raised for malformed scenario files."""


_WORLD_KEYS = {
    "servers": ("n_servers", int),
    "clients": ("n_clients", int),
    "nat_fraction": ("nat_fraction", float),
    "connection_limit": ("connection_limit", int),
    "grace_seconds": ("grace_seconds", float),
    "k": ("k", int),
    "bootstrap_count": ("bootstrap_count", int),
    "rpc_latency": ("rpc_latency", float),
    "alpha": ("alpha", int),
    "bootstrap_depth_margin": ("bootstrap_depth_margin", int),
    "tick_interval": ("tick_interval", float),
    "lookup_interval": ("lookup_interval", float),
    "seed": ("seed", int),
    "log_events": ("log_events", lambda s: s.strip().lower() in ("1", "true", "yes")),
}

_CHURN_KEYS = {"session", "intersession", "arrival"}
_RUN_KEYS = {"warmup", "duration"}


def parse_distribution(text: str) -> Distribution:
    """Parse 'kind:param[:param]' (lognormal:mu:sigma, exponential:mean,
    uniform:lo:hi, fixed:value)."""
    parts = text.strip().split(":")
    kind = parts[0].strip().lower()
    try:
        params = [float(p) for p in parts[1:]]
    except ValueError as exc:
        raise ScenarioError(f"bad distribution parameters in {text!r}") from exc
    arity = {"lognormal": 2, "exponential": 1, "uniform": 2, "fixed": 1}.get(kind)
    if arity is None:
        raise ScenarioError(f"unknown distribution kind in {text!r}")
    if len(params) != arity:
        raise ScenarioError(f"{kind} takes {arity} parameter(s), got {len(params)} in {text!r}")
    return Distribution(kind, *params)


def format_distribution(dist: Distribution) -> str:
    if dist.kind in ("exponential", "fixed"):
        return f"{dist.kind}:{dist.a:g}"
    return f"{dist.kind}:{dist.a:g}:{dist.b:g}"


class Scenario:
    """Parsed scenario: a SimConfig plus the run window for the CLI."""

    def __init__(self, config: SimConfig, warmup: float = 0.0, duration: float = 0.0):
        self.config = config
        self.warmup = warmup
        self.duration = duration

    @property
    def has_churn(self) -> bool:
        return self.config.churn is not None


def load_scenario(path: str | Path) -> Scenario:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ScenarioError(f"cannot read scenario file {path}")
    kwargs: dict = {}
    if parser.has_section("world"):
        for key, raw in parser.items("world"):
            if key not in _WORLD_KEYS:
                raise ScenarioError(f"unknown [world] key {key!r} in {path}")
            attr, conv = _WORLD_KEYS[key]
            try:
                kwargs[attr] = conv(raw)
            except ValueError as exc:
                raise ScenarioError(f"bad value for [world] {key} = {raw!r}") from exc
    churn = None
    if parser.has_section("churn"):
        fields = {}
        for key, raw in parser.items("churn"):
            if key not in _CHURN_KEYS:
                raise ScenarioError(f"unknown [churn] key {key!r} in {path}")
            fields[key] = parse_distribution(raw)
        churn = ChurnModel(
            session_length=fields.get("session", DEFAULT_SESSION),
            intersession=fields.get("intersession", DEFAULT_INTERSESSION),
            arrival=fields.get("arrival", DEFAULT_ARRIVAL),
        )
    kwargs["churn"] = churn
    warmup = duration = 0.0
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in _RUN_KEYS:
                raise ScenarioError(f"unknown [run] key {key!r} in {path}")
            try:
                value = float(raw)
            except ValueError as exc:
                raise ScenarioError(f"bad value for [run] {key} = {raw!r}") from exc
            if key == "warmup":
                warmup = value
            else:
                duration = value
    try:
        config = SimConfig(**kwargs)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return Scenario(config, warmup=warmup, duration=duration)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    cfg = scenario.config
    lines = [
        "[world]",
        f"servers = {cfg.n_servers}",
        f"clients = {cfg.n_clients}",
        f"nat_fraction = {cfg.nat_fraction:g}",
        f"connection_limit = {cfg.connection_limit}",
        f"grace_seconds = {cfg.grace_seconds:g}",
        f"k = {cfg.k}",
        f"bootstrap_count = {cfg.bootstrap_count}",
        f"rpc_latency = {cfg.rpc_latency:g}",
        f"alpha = {cfg.alpha}",
        f"bootstrap_depth_margin = {cfg.bootstrap_depth_margin}",
        f"tick_interval = {cfg.tick_interval:g}",
        f"lookup_interval = {cfg.lookup_interval:g}",
        f"seed = {cfg.seed}",
        f"log_events = {'true' if cfg.log_events else 'false'}",
    ]
    if cfg.churn is not None:
        lines += [
            "",
            "[churn]",
            f"session = {format_distribution(cfg.churn.session_length)}",
            f"intersession = {format_distribution(cfg.churn.intersession)}",
            f"arrival = {format_distribution(cfg.churn.arrival)}",
        ]
    if scenario.warmup or scenario.duration:
        lines += [
            "",
            "[run]",
            f"warmup = {scenario.warmup:g}",
            f"duration = {scenario.duration:g}",
        ]
    Path(path).write_text("\n".join(lines) + "\n")


# -- world builders ----------------------------------------------------


def build_static_world(config: SimConfig) -> SimWorld:
    """Spawn and fully bootstrap a fixed population, one node at a time.

    The first bootstrap_count servers become the (always public)
    bootstrap nodes. Connection-manager ticks are flushed after every
    bootstrap, so nodes sit above the connection limit for at most one
    join. The clock advances through the RPC rounds, which lets older
    connections age past the eviction grace period during the build.
    """
    world = SimWorld(config)
    server_ids = []
    for i in range(config.n_servers):
        reachability = PUBLIC if i < config.bootstrap_count else None
        server_ids.append(world.spawn_node(SERVER, reachability))
    client_ids = [world.spawn_node(CLIENT) for _ in range(config.n_clients)]
    world.bootnodes = server_ids[: config.bootstrap_count]
    for nid in server_ids:
        world.node_join(nid)
        world.bootstrap(nid)
        world.flush_ticks()
    for nid in client_ids:
        world.node_join(nid)
        world.bootstrap(nid)
        world.flush_ticks()
    return world


def build_churn_world(config: SimConfig) -> SimWorld:
    """Spawn a roster that cycles online/offline per the churn model.

    Bootstrap nodes join immediately and stay up; everyone else gets a
    first join scheduled at staggered arrival times and then alternates
    session/intersession draws. Call run() to let the world evolve.
    """
    if config.churn is None:
        raise ValueError("build_churn_world needs a churn model in the config")
    world = SimWorld(config)
    server_ids = []
    for i in range(config.n_servers):
        reachability = PUBLIC if i < config.bootstrap_count else None
        server_ids.append(world.spawn_node(SERVER, reachability))
    client_ids = [world.spawn_node(CLIENT) for _ in range(config.n_clients)]
    world.bootnodes = server_ids[: config.bootstrap_count]
    for nid in world.bootnodes:
        world.node_join(nid)
        world.bootstrap(nid)
    world.flush_ticks()
    at = 0.0
    for nid in server_ids[config.bootstrap_count :] + client_ids:
        at += config.churn.arrival.sample(world.rng)
        world.schedule(at, "join", nid)
    world.schedule(config.tick_interval, "sweep")
    return world


# -- ground-truth files ------------------------------------------------

NODES_FILE = "nodes.txt"
GTILDE_FILE = "gtilde_edges.txt"
G_FILE = "g_edges.txt"
EPRIME_FILE = "eprime_edges.txt"
EVENTS_FILE = "events.log"


def write_ground_truth(world: SimWorld, out_dir: str | Path) -> GroundTruth:
    """Dump the node table and the three edge lists as sorted text files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt = world.ground_truth_graphs(materialize=True)
    node_lines = sorted(
        f"{id_to_hex(nid)} {role} {reach}"
        for nid, (role, reach, online) in gt.nodes.items()
        if online
    )
    (out / NODES_FILE).write_text("\n".join(node_lines) + "\n" if node_lines else "")

    def edge_line(edge: tuple[int, int, bool, bool]) -> str:
        lo, hi, rl, rh = edge
        return f"{id_to_hex(lo)} {id_to_hex(hi)} {int(rl)}{int(rh)}"

    for fname, edges in ((GTILDE_FILE, gt.g_tilde_edges), (G_FILE, gt.g_edges)):
        lines = sorted(edge_line(e) for e in edges)
        (out / fname).write_text("\n".join(lines) + "\n" if lines else "")
    ep_lines = sorted(f"{id_to_hex(a)} {id_to_hex(b)}" for a, b in gt.eprime_edges)
    (out / EPRIME_FILE).write_text("\n".join(ep_lines) + "\n" if ep_lines else "")
    if world.event_log is not None:
        (out / EVENTS_FILE).write_text("\n".join(world.event_log) + "\n")
    return gt


def load_ground_truth(in_dir: str | Path) -> GroundTruth:
    """Read a ground-truth directory back into a GroundTruth value."""
    src = Path(in_dir)
    nodes: dict[int, tuple[str, str, bool]] = {}
    for line in (src / NODES_FILE).read_text().splitlines():
        if not line.strip():
            continue
        hex_id, role, reach = line.split()
        nodes[int(hex_id, 16)] = (role, reach, True)

    def read_edges(fname: str) -> list[tuple[int, int, bool, bool]]:
        edges = []
        path = src / fname
        if not path.exists():
            return edges
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            lo, hi, flags = line.split()
            edges.append((int(lo, 16), int(hi, 16), flags[0] == "1", flags[1] == "1"))
        return edges

    g_tilde = read_edges(GTILDE_FILE)
    g = read_edges(G_FILE)
    eprime: list[tuple[int, int]] = []
    ep_path = src / EPRIME_FILE
    if ep_path.exists():
        for line in ep_path.read_text().splitlines():
            if not line.strip():
                continue
            a, b = line.split()
            eprime.append((int(a, 16), int(b, 16)))
    pairs = {(min(a, b), max(a, b)) for a, b in eprime}
    return GroundTruth(
        nodes=nodes,
        g_tilde_edges=g_tilde,
        g_edges=g,
        eprime_edges=eprime,
        g_tilde_edge_count=len(g_tilde),
        g_edge_count=len(g),
        eprime_directed_count=len(eprime),
        eprime_pair_count=len(pairs),
    )

"""Deterministic discrete-event simulator of a Kademlia-style overlay.

The world holds servers (DHT participants with routing tables) and clients
(connection-only peers that never appear in anyone's buckets), joined by
undirected transport connections. Every new connection between two servers
is tentatively reflected into the buckets on both sides; a full bucket
simply refuses, so a connection can be reflected by both endpoints, one,
or neither. Entries leave buckets only when their connection dies.

Nodes cap their connection count (default 900): when over the cap, a
maintenance tick evicts uniformly random connections older than a grace
period (default 30 s) until the cap holds again. Ticks never run inside
connect/lookup operations; they are flushed explicitly by world builders,
periodic sweep events, and `run`.

All randomness flows from one seeded generator, so identical seed and
config give an identical trajectory. The clock is real-valued seconds;
RPCs cost a fixed configurable latency.
"""

from __future__ import annotations

import heapq
import logging
import math
import random
from bisect import insort
from dataclasses import dataclass, field

from .dht import ID_BITS, RoutingTable, common_prefix_length, digest, target_with_cpl

log = logging.getLogger(__name__)

SERVER = "server"
CLIENT = "client"
PUBLIC = "public"
PRIVATE = "private"

_INF = float("inf")


@dataclass(frozen=True)
class Distribution:
    """Nonnegative draw spec: lognormal(mu, sigma), exponential(mean),
    uniform(lo, hi) or fixed(value)."""

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "exponential" and self.a <= 0:
            raise ValueError("exponential mean must be > 0")
        if self.kind == "uniform" and not 0 <= self.a <= self.b:
            raise ValueError("uniform bounds must satisfy 0 <= lo <= hi")
        if self.kind == "fixed" and self.a < 0:
            raise ValueError("fixed value must be >= 0")
        if self.kind == "lognormal" and self.b < 0:
            raise ValueError("lognormal sigma must be >= 0")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "lognormal":
            return rng.lognormvariate(self.a, self.b)
        if self.kind == "exponential":
            return rng.expovariate(1.0 / self.a)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b)
        if self.kind == "fixed":
            return self.a
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    def mean(self) -> float:
        if self.kind == "lognormal":
            return math.exp(self.a + self.b * self.b / 2.0)
        if self.kind == "exponential":
            return self.a
        if self.kind == "uniform":
            return (self.a + self.b) / 2.0
        if self.kind == "fixed":
            return self.a
        raise ValueError(f"unknown distribution kind {self.kind!r}")


# Session lengths fitted so that ~57% of sessions exceed 5 min and ~26%
# exceed 10 min; the implied 30 min tail (~2.7%) falls out on its own.
DEFAULT_SESSION = Distribution("lognormal", 5.8523, 0.8510)
DEFAULT_INTERSESSION = Distribution("exponential", 600.0)
DEFAULT_ARRIVAL = Distribution("exponential", 1.0)


@dataclass(frozen=True)
class ChurnModel:
    session_length: Distribution = DEFAULT_SESSION
    intersession: Distribution = DEFAULT_INTERSESSION
    arrival: Distribution = DEFAULT_ARRIVAL


@dataclass
class SimConfig:
    n_servers: int = 100
    n_clients: int = 0
    nat_fraction: float = 0.0
    connection_limit: int = 900
    grace_seconds: float = 30.0
    k: int = 20
    bootstrap_count: int = 4
    rpc_latency: float = 0.05
    alpha: int = 3
    bootstrap_depth_margin: int = 4
    tick_interval: float = 10.0
    lookup_interval: float = 0.0
    seed: int = 0
    churn: ChurnModel | None = None
    log_events: bool = False

    def __post_init__(self) -> None:
        if self.connection_limit < 1:
            raise ValueError("connection_limit must be >= 1")
        if self.grace_seconds < 0:
            raise ValueError("grace_seconds must be >= 0")
        if not 0.0 <= self.nat_fraction <= 1.0:
            raise ValueError("nat_fraction must be in [0, 1]")


class Connection:
    """One transport connection; endpoints stored in canonical (lo, hi) order.

    ``reflected_lo`` means lo's buckets hold hi (and vice versa); the flags
    are fixed at establishment time because bucket insertion is attempted
    exactly once, when the connection comes up.
    """

    __slots__ = ("lo", "hi", "established_at", "initiator", "reflected_lo", "reflected_hi")

    def __init__(self, a: int, b: int, established_at: float, initiator: int):
        self.lo, self.hi = (a, b) if a < b else (b, a)
        self.established_at = established_at
        self.initiator = initiator
        self.reflected_lo = False
        self.reflected_hi = False

    def other(self, node_id: int) -> int:
        return self.hi if node_id == self.lo else self.lo

    def reflected_by(self, node_id: int) -> bool:
        return self.reflected_lo if node_id == self.lo else self.reflected_hi

    def is_inbound(self, node_id: int) -> bool:
        return self.initiator != node_id


class SimNode:
    __slots__ = (
        "id",
        "role",
        "reachability",
        "online",
        "connections",
        "routing",
        "provided_keys",
        "stored_provider_records",
        "wantlist",
        "sessions_started",
    )

    def __init__(self, node_id: int, role: str, reachability: str):
        self.id = node_id
        self.role = role
        self.reachability = reachability
        self.online = False
        self.connections: dict[int, Connection] = {}
        self.routing: RoutingTable | None = None
        self.provided_keys: set[int] = set()
        self.stored_provider_records: dict[int, set[int]] = {}
        self.wantlist: set[int] = set()
        self.sessions_started = 0

    @property
    def is_server(self) -> bool:
        return self.role == SERVER


@dataclass
class WorldStats:
    connects: int = 0
    refusals: int = 0
    disconnects: int = 0
    evictions: int = 0
    find_node_calls: int = 0
    lookups: int = 0
    session_draws: list[float] = field(default_factory=list)


@dataclass
class RetrieveResult:
    """Outcome of the two parallel retrieval strategies."""

    success: bool
    via_dht: bool
    via_broadcast: bool
    providers: set[int]


@dataclass
class GroundTruth:
    """Instantaneous overlay graphs: full (with clients), server-only, and
    the directed bucket-induced edge set."""

    nodes: dict[int, tuple[str, str, bool]]  # id -> (role, reachability, online)
    g_tilde_edges: list[tuple[int, int, bool, bool]]  # (lo, hi, reflected_lo, reflected_hi)
    g_edges: list[tuple[int, int, bool, bool]]  # server-server subset
    eprime_edges: list[tuple[int, int]]  # directed (holder -> entry)
    g_tilde_edge_count: int = 0
    g_edge_count: int = 0
    eprime_directed_count: int = 0
    eprime_pair_count: int = 0


class SimWorld:
    """Single-owner mutable overlay state plus a time-ordered event queue."""

    def __init__(self, config: SimConfig, rng: random.Random | None = None):
        self.config = config
        self.rng = rng if rng is not None else random.Random(config.seed)
        self.clock = 0.0
        self.nodes: dict[int, SimNode] = {}
        self.bootnodes: list[int] = []
        self.stats = WorldStats()
        self.online_servers = 0
        self.event_log: list[str] | None = [] if config.log_events else None
        self._events: list[tuple[float, int, str, int]] = []
        self._event_seq = 0
        self._pending_ticks: set[int] = set()

    # -- bookkeeping -------------------------------------------------

    def _log(self, kind: str, detail: str) -> None:
        if self.event_log is not None:
            self.event_log.append(f"{self.clock:.3f} {kind} {detail}")

    def schedule(self, delay: float, kind: str, node_id: int = 0) -> None:
        heapq.heappush(self._events, (self.clock + delay, self._event_seq, kind, node_id))
        self._event_seq += 1

    def _advance_clock(self, dt: float) -> None:
        # Moves time only; queued events wait for run()/advance().
        self.clock += dt

    # -- node lifecycle ----------------------------------------------

    def spawn_node(self, role: str, reachability: str | None = None) -> int:
        """Create an offline node with a fresh identity (digest of a fresh key)."""
        if role not in (SERVER, CLIENT):
            raise ValueError(f"unknown role {role!r}")
        if reachability is None:
            reachability = PRIVATE if self.rng.random() < self.config.nat_fraction else PUBLIC
        node_id = digest(self.rng.randbytes(32))
        while node_id in self.nodes:  # astronomically unlikely
            node_id = digest(self.rng.randbytes(32))
        self.nodes[node_id] = SimNode(node_id, role, reachability)
        return node_id

    def node_join(self, node_id: int) -> None:
        node = self.nodes[node_id]
        if node.online:
            return
        node.online = True
        node.sessions_started += 1
        if node.is_server:
            node.routing = RoutingTable(node_id, self.config.k)
            self.online_servers += 1
        self._log("join", f"{node_id:064x}")

    def node_leave(self, node_id: int) -> None:
        node = self.nodes[node_id]
        if not node.online:
            return
        for conn in list(node.connections.values()):
            self.disconnect(conn)
        node.online = False
        if node.is_server:
            self.online_servers -= 1
        node.routing = None
        node.stored_provider_records.clear()
        node.wantlist.clear()
        self._log("leave", f"{node_id:064x}")

    # -- connections -------------------------------------------------

    def connect(self, a_id: int, b_id: int) -> Connection | None:
        """a dials b. Returns the connection, or None when refused.

        Refused when either side is offline or when b cannot accept
        inbound dials (private reachability). Each server endpoint tries
        to reflect the other into its buckets iff the other is a server;
        the attempt happens once, here.
        """
        if a_id == b_id:
            raise ValueError("a node cannot connect to itself")
        a = self.nodes[a_id]
        b = self.nodes[b_id]
        if not (a.online and b.online):
            self.stats.refusals += 1
            return None
        existing = a.connections.get(b_id)
        if existing is not None:
            return existing
        if b.reachability == PRIVATE:
            self.stats.refusals += 1
            return None
        conn = Connection(a_id, b_id, self.clock, a_id)
        if a.routing is not None and b.is_server:
            reflected = a.routing.insert(b_id)
            if a_id == conn.lo:
                conn.reflected_lo = reflected
            else:
                conn.reflected_hi = reflected
        if b.routing is not None and a.is_server:
            reflected = b.routing.insert(a_id)
            if b_id == conn.lo:
                conn.reflected_lo = reflected
            else:
                conn.reflected_hi = reflected
        a.connections[b_id] = conn
        b.connections[a_id] = conn
        limit = self.config.connection_limit
        if len(a.connections) > limit:
            self._pending_ticks.add(a_id)
        if len(b.connections) > limit:
            self._pending_ticks.add(b_id)
        self.stats.connects += 1
        return conn

    def disconnect(self, conn: Connection) -> None:
        lo = self.nodes[conn.lo]
        hi = self.nodes[conn.hi]
        del lo.connections[conn.hi]
        del hi.connections[conn.lo]
        if conn.reflected_lo and lo.routing is not None:
            lo.routing.remove(conn.hi)
        if conn.reflected_hi and hi.routing is not None:
            hi.routing.remove(conn.lo)
        self.stats.disconnects += 1

    def connection_manager_tick(self, node_id: int) -> int:
        """Prune a node back to the connection limit.

        Evicts uniformly random connections strictly older than the grace
        period until the limit holds or no eligible connection remains.
        Returns the number of evictions.
        """
        node = self.nodes[node_id]
        excess = len(node.connections) - self.config.connection_limit
        if excess <= 0:
            return 0
        cutoff = self.clock - self.config.grace_seconds
        eligible = [c for c in node.connections.values() if c.established_at < cutoff]
        evicted = 0
        while excess > 0 and eligible:
            i = self.rng.randrange(len(eligible))
            conn = eligible[i]
            eligible[i] = eligible[-1]
            eligible.pop()
            self.disconnect(conn)
            self._log("evict", f"{node_id:064x} {conn.other(node_id):064x}")
            evicted += 1
            excess -= 1
        self.stats.evictions += evicted
        return evicted

    def flush_ticks(self) -> None:
        while self._pending_ticks:
            self.connection_manager_tick(self._pending_ticks.pop())

    # -- DHT RPCs ----------------------------------------------------

    def handle_find_node(self, receiver_id: int, raw_target: bytes) -> list[int] | None:
        """Wire-level FindNode: the receiver hashes the raw target and
        answers with its k closest bucket entries. None models a timeout
        (receiver offline or a client)."""
        receiver = self.nodes.get(receiver_id)
        if receiver is None or not receiver.online or receiver.routing is None:
            return None
        self.stats.find_node_calls += 1
        return receiver.routing.closest_nodes(digest(raw_target), self.config.k)

    def _query_find_node(self, receiver: SimNode, target: int) -> list[int] | None:
        # Internal variant for senders that know a pre-image of the target
        # (a peer's public key, the content bytes): skips the re-hash.
        if not receiver.online or receiver.routing is None:
            return None
        self.stats.find_node_calls += 1
        return receiver.routing.closest_nodes(target, self.config.k)

    # -- lookups -----------------------------------------------------

    def iterative_lookup(self, origin_id: int, target: int) -> list[int]:
        """Multi-round lookup converging on the k closest nodes to target.

        Each round queries the alpha closest unqueried candidates; every
        newly discovered node is dialed immediately (that is how bucket
        entries and the connection hoard build up). When a round brings
        nothing closer than the current k-th best, the remaining unqueried
        members of the current top k are queried once; the lookup stops
        when that no longer improves anything either.
        """
        origin = self.nodes[origin_id]
        if not origin.online:
            raise RuntimeError("lookup origin is offline")
        k = self.config.k
        alpha = self.config.alpha
        self.stats.lookups += 1

        if origin.routing is not None and len(origin.routing):
            seeds = origin.routing.closest_nodes(target, k)
        else:
            seeds = [
                pid
                for pid in origin.connections
                if self.nodes[pid].is_server and self.nodes[pid].online
            ]
        best: list[tuple[int, int]] = []
        seen: set[int] = set()
        queried: set[int] = set()
        for pid in seeds:
            seen.add(pid)
            insort(best, (pid ^ target, pid))

        def absorb(pids: list[int]) -> bool:
            kth = best[k - 1][0] if len(best) >= k else _INF
            improved = False
            for pid in pids:
                if pid == origin_id or pid in seen:
                    continue
                seen.add(pid)
                self.connect(origin_id, pid)
                dist = pid ^ target
                insort(best, (dist, pid))
                if dist < kth:
                    improved = True
            return improved

        def query_round(pids: list[int]) -> bool:
            improved = False
            for pid in pids:
                queried.add(pid)
                peer = self.nodes[pid]
                if pid not in origin.connections and self.connect(origin_id, pid) is None:
                    continue
                response = self._query_find_node(peer, target)
                if response is None:
                    continue
                if absorb(response):
                    improved = True
            self._advance_clock(self.config.rpc_latency)
            return improved

        while True:
            batch = [pid for _, pid in best if pid not in queried][:alpha]
            if not batch:
                break
            if query_round(batch):
                continue
            # Stalled: finish off the current k closest before giving up.
            stragglers = [pid for _, pid in best[:k] if pid not in queried]
            if not stragglers or not query_round(stragglers):
                break
        return [pid for _, pid in best[:k]]

    def bootstrap(self, node_id: int) -> None:
        """Join procedure: dial the bootstrap peers, look up the own ID,
        then (servers only) one random target per bucket index up to
        ceil(log2 N) plus a margin."""
        node = self.nodes[node_id]
        if not node.online:
            raise RuntimeError("cannot bootstrap an offline node")
        for bn in self.bootnodes:
            if bn != node_id:
                self.connect(node_id, bn)
        self.iterative_lookup(node_id, node_id)
        if node.is_server:
            n_est = max(self.online_servers, 2)
            depth = min(
                int(math.ceil(math.log2(n_est))) + self.config.bootstrap_depth_margin,
                ID_BITS - 1,
            )
            for cpl in range(depth + 1):
                self.iterative_lookup(node_id, target_with_cpl(node_id, cpl, self.rng))

    # -- content layer -----------------------------------------------

    def publish_provider(self, origin_id: int, key: int) -> list[int]:
        """Store the provider record for key on the k closest servers.

        The origin competes for a storage slot like anyone else (lookups
        never return the asking node, so it is merged back in here).
        """
        origin = self.nodes[origin_id]
        origin.provided_keys.add(key)
        candidates = set(self.iterative_lookup(origin_id, key))
        if origin.is_server:
            candidates.add(origin_id)
        stored_on = []
        for pid in sorted(candidates, key=key.__xor__)[: self.config.k]:
            peer = self.nodes[pid]
            if peer.online and peer.is_server:
                peer.stored_provider_records.setdefault(key, set()).add(origin_id)
                stored_on.append(pid)
        return stored_on

    def retrieve(self, origin_id: int, key: int) -> RetrieveResult:
        """Run both retrieval strategies: DHT provider lookup plus a
        broadcast want-query to every currently connected peer."""
        origin = self.nodes[origin_id]
        if not origin.online:
            raise RuntimeError("retrieve origin is offline")
        origin.wantlist.add(key)

        # Broadcast leg, judged on the connections as they are right now.
        via_broadcast = any(
            self.nodes[pid].online and key in self.nodes[pid].provided_keys
            for pid in origin.connections
        )

        # DHT leg: find records near the key, then fetch from providers.
        providers: set[int] = set()
        for pid in self.iterative_lookup(origin_id, key):
            peer = self.nodes[pid]
            if peer.online and peer.is_server:
                providers |= peer.stored_provider_records.get(key, set())
        via_dht = False
        for pid in sorted(providers):
            peer = self.nodes.get(pid)
            if peer is None or not peer.online or key not in peer.provided_keys:
                continue
            if pid in origin.connections or self.connect(origin_id, pid) is not None:
                via_dht = True
                break
        success = via_dht or via_broadcast
        if success:
            origin.wantlist.discard(key)
        return RetrieveResult(success, via_dht, via_broadcast, providers)

    def sybil_overwrite(self, key: int, sybil_ids: list[int]) -> int:
        """Replace every stored provider list for key with the Sybil set.
        Returns how many records were overwritten."""
        for sid in sybil_ids:
            if not self.nodes[sid].is_server:
                raise ValueError("sybil ids must be spawned as servers")
        overwritten = 0
        for node in self.nodes.values():
            if key in node.stored_provider_records:
                node.stored_provider_records[key] = set(sybil_ids)
                overwritten += 1
        return overwritten

    # -- event loop --------------------------------------------------

    def _dispatch(self, kind: str, node_id: int) -> None:
        churn = self.config.churn
        if kind == "join":
            node = self.nodes[node_id]
            if node.online:
                return
            self.node_join(node_id)
            self.bootstrap(node_id)
            self.flush_ticks()
            if churn is not None:
                session = churn.session_length.sample(self.rng)
                self.stats.session_draws.append(session)
                self.schedule(session, "leave", node_id)
            if self.config.lookup_interval > 0:
                self.schedule(self.config.lookup_interval, "lookup", node_id)
        elif kind == "leave":
            self.node_leave(node_id)
            if churn is not None:
                self.schedule(churn.intersession.sample(self.rng), "join", node_id)
        elif kind == "sweep":
            for node in self.nodes.values():
                if node.online and len(node.connections) > self.config.connection_limit:
                    self.connection_manager_tick(node.id)
            self.schedule(self.config.tick_interval, "sweep")
        elif kind == "lookup":
            node = self.nodes[node_id]
            if node.online:
                self.iterative_lookup(node_id, self.rng.getrandbits(ID_BITS))
                self.flush_ticks()
                self.schedule(self.config.lookup_interval, "lookup", node_id)
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def advance(self, dt: float) -> None:
        """Advance the clock by dt, processing events due strictly before
        the new time."""
        end = self.clock + dt
        events = self._events
        while events and events[0][0] < end:
            when, _, kind, node_id = heapq.heappop(events)
            if when > self.clock:
                self.clock = when
            self._dispatch(kind, node_id)
        if end > self.clock:
            self.clock = end

    def run(self, duration: float) -> None:
        """Process scheduled churn, sweeps and lookups for a time window.

        Handlers may themselves consume simulated time (bootstraps issue
        RPCs), in which case events already due run late; time never moves
        backwards either way. Deterministic under a fixed seed.
        """
        self.advance(duration)

    # -- ground truth ------------------------------------------------

    def ground_truth_graphs(self, materialize: bool = True) -> GroundTruth:
        """Export the live overlay, its server-only subgraph and the
        directed bucket-induced edge set, plus the counts analytics needs.

        With materialize=False only the counts are filled in, which keeps
        large worlds cheap to measure.
        """
        nodes = {
            nid: (n.role, n.reachability, n.online) for nid, n in self.nodes.items()
        }
        g_tilde: list[tuple[int, int, bool, bool]] = []
        g: list[tuple[int, int, bool, bool]] = []
        eprime: list[tuple[int, int]] = []
        n_tilde = n_g = directed = pairs = 0
        for node in self.nodes.values():
            if not node.online:
                continue
            nid = node.id
            for far, conn in node.connections.items():
                if far < nid:
                    continue  # visit each connection once, from its lo end
                n_tilde += 1
                both_servers = node.is_server and self.nodes[far].is_server
                if both_servers:
                    n_g += 1
                refl_lo, refl_hi = conn.reflected_lo, conn.reflected_hi
                if refl_lo or refl_hi:
                    pairs += 1
                    directed += (1 if refl_lo else 0) + (1 if refl_hi else 0)
                if materialize:
                    g_tilde.append((nid, far, refl_lo, refl_hi))
                    if both_servers:
                        g.append((nid, far, refl_lo, refl_hi))
                    if refl_lo:
                        eprime.append((nid, far))
                    if refl_hi:
                        eprime.append((far, nid))
        return GroundTruth(
            nodes=nodes,
            g_tilde_edges=g_tilde,
            g_edges=g,
            eprime_edges=eprime,
            g_tilde_edge_count=n_tilde,
            g_edge_count=n_g,
            eprime_directed_count=directed,
            eprime_pair_count=pairs,
        )

    def mean_bucket_entries(self) -> float:
        """Average routing-table size over online servers."""
        sizes = [len(n.routing) for n in self.nodes.values() if n.online and n.routing is not None]
        if not sizes:
            raise ValueError("no online servers")
        return sum(sizes) / len(sizes)

    def check_conservation(self) -> None:
        """Assert the bucket-entry <-> live-connection correspondence."""
        for node in self.nodes.values():
            if not node.online:
                if node.connections:
                    raise AssertionError(f"offline node {node.id:#x} still has connections")
                continue
            if node.routing is None:
                continue
            in_table = set(node.routing.entries())
            for far, conn in node.connections.items():
                if conn.reflected_by(node.id) != (far in in_table):
                    raise AssertionError(
                        f"reflection flag out of sync between {node.id:#x} and {far:#x}"
                    )
            for entry in in_table:
                conn = node.connections.get(entry)
                if conn is None:
                    raise AssertionError(f"dangling bucket entry {entry:#x} at {node.id:#x}")
                peer = self.nodes[entry]
                if not (peer.online and peer.is_server):
                    raise AssertionError(f"bucket entry {entry:#x} is not an online server")

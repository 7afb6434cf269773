"""
Topology Library for the Narses flow-level network simulator
Generates, loads, validates and queries transit-stub topologies and
precomputes the end-host latency table used for propagation delay
"""
import heapq
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from libraries.SimCoreLibrary import NarsesError

FILE_HEADER = "narses-topo v1"


# Custom exceptions for topology operations
class TopologyError(NarsesError):
    """Base exception for topology operations"""


class InvalidParams(TopologyError):
    """Raised when generator parameters are inconsistent"""


class UnknownNode(TopologyError):
    """Raised when a node id is not part of the topology"""


class InvariantViolation(TopologyError):
    """Raised when a structural topology invariant does not hold"""


class EmptyTable(TopologyError):
    """Raised when statistics are requested over fewer than two hosts"""


class ParseError(TopologyError):
    """Raised when a topology file is malformed"""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NodeKind(Enum):
    TRANSIT_ROUTER = "transit"
    STUB_ROUTER = "stub"
    END_HOST = "host"


class LinkClass(Enum):
    TRANSIT_TRANSIT = "transit-transit"
    TRANSIT_STUB = "transit-stub"
    STUB_STUB = "stub-stub"
    ACCESS = "access"


@dataclass(frozen=True)
class Node:
    """A router or an end host; only end hosts carry an access bandwidth (bits/s)"""
    id: int
    kind: NodeKind
    access_bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind is NodeKind.END_HOST:
            bw = self.access_bandwidth
            if bw is None or not math.isfinite(bw) or bw <= 0:
                raise InvariantViolation(f"End host {self.id} needs access bandwidth > 0, got {bw}")
        elif self.access_bandwidth is not None:
            raise InvariantViolation(f"Router {self.id} cannot have an access bandwidth")


@dataclass(frozen=True)
class Link:
    """Undirected link, endpoints stored in ascending order"""
    u: int
    v: int
    bandwidth: float
    latency: float

    def __post_init__(self):
        if self.u == self.v:
            raise InvariantViolation(f"Self-loop on node {self.u}")
        if self.u > self.v:
            u, v = self.v, self.u
            object.__setattr__(self, "u", u)
            object.__setattr__(self, "v", v)
        if not (math.isfinite(self.latency) and self.latency > 0):
            raise InvariantViolation(f"Link {self.u}-{self.v} latency must be > 0, got {self.latency}")
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InvariantViolation(f"Link {self.u}-{self.v} bandwidth must be > 0, got {self.bandwidth}")

    @property
    def endpoints(self) -> Tuple[int, int]:
        return (self.u, self.v)


@dataclass(frozen=True)
class TSParams:
    """
    Transit-stub generator parameters

    Latency ranges are (min, max) seconds; bandwidth entries are candidate
    values in bits/s drawn uniformly per link; the access mix is a sequence
    of (bits/s, probability).
    """
    transit_domains: int = 1
    transit_nodes_per_domain: int = 6
    stub_domains_per_transit_node: int = 3
    stub_routers_per_stub: int = 3
    hosts_per_stub_router: int = 10
    transit_transit_latency: Tuple[float, float] = (0.008, 0.024)
    transit_stub_latency: Tuple[float, float] = (0.004, 0.010)
    stub_stub_latency: Tuple[float, float] = (0.001, 0.005)
    access_latency: Tuple[float, float] = (0.001, 0.003)
    transit_transit_bandwidth: Tuple[float, ...] = (10e9,)
    transit_stub_bandwidth: Tuple[float, ...] = (1e9,)
    stub_stub_bandwidth: Tuple[float, ...] = (100e6,)
    access_bandwidth_mix: Tuple[Tuple[float, float], ...] = ((1.5e6, 0.5), (10e6, 0.3), (45e6, 0.2))
    chord_probability: float = 0.25
    seed: int = 1

    @property
    def router_count(self) -> int:
        transit = self.transit_domains * self.transit_nodes_per_domain
        return transit * (1 + self.stub_domains_per_transit_node * self.stub_routers_per_stub)

    @property
    def host_count(self) -> int:
        return (self.transit_domains * self.transit_nodes_per_domain * self.stub_domains_per_transit_node
                * self.stub_routers_per_stub * self.hosts_per_stub_router)

    def validate(self) -> None:
        """Raises InvalidParams when any count, range or probability is out of bounds"""
        counts = {
            "transit_domains": self.transit_domains,
            "transit_nodes_per_domain": self.transit_nodes_per_domain,
            "stub_domains_per_transit_node": self.stub_domains_per_transit_node,
            "stub_routers_per_stub": self.stub_routers_per_stub,
            "hosts_per_stub_router": self.hosts_per_stub_router,
        }
        for name, value in counts.items():
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise InvalidParams(f"{name} must be an integer >= 1, got {value!r}")

        ranges = {
            "transit_transit_latency": self.transit_transit_latency,
            "transit_stub_latency": self.transit_stub_latency,
            "stub_stub_latency": self.stub_stub_latency,
            "access_latency": self.access_latency,
        }
        for name, (low, high) in ranges.items():
            if not (0 < low <= high) or not math.isfinite(high):
                raise InvalidParams(f"{name} must satisfy 0 < min <= max, got ({low}, {high})")

        for name in ("transit_transit_bandwidth", "transit_stub_bandwidth", "stub_stub_bandwidth"):
            values = getattr(self, name)
            if not values or any(not math.isfinite(bw) or bw <= 0 for bw in values):
                raise InvalidParams(f"{name} needs at least one positive bandwidth")

        if not self.access_bandwidth_mix:
            raise InvalidParams("access_bandwidth_mix is empty")
        if any(bw <= 0 or p < 0 for bw, p in self.access_bandwidth_mix):
            raise InvalidParams("access_bandwidth_mix entries need bandwidth > 0 and probability >= 0")
        total = sum(p for _, p in self.access_bandwidth_mix)
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise InvalidParams(f"access_bandwidth_mix probabilities sum to {total}, expected 1")
        if not 0.0 <= self.chord_probability <= 1.0:
            raise InvalidParams(f"chord_probability must be in [0, 1], got {self.chord_probability}")


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the no-core-bottleneck check"""
    passed: bool
    max_access_bandwidth: float
    violations: Tuple[Link, ...] = ()


@dataclass(frozen=True)
class TopologyStats:
    avg_rtt: float
    max_rtt: float
    host_count: int


class Topology:
    """
    Node/link graph with a per-node adjacency list

    Construction only checks structure (known endpoints, one link per node
    pair). Hierarchy and connectivity are checked by validate().
    """

    def __init__(self, nodes: Iterable[Node], links: Iterable[Link], seed: int = 0,
                 params: Optional[TSParams] = None):
        self.seed = seed
        self.params = params
        self.nodes: Dict[int, Node] = {}
        for node in sorted(nodes, key=lambda n: n.id):
            if node.id in self.nodes:
                raise InvariantViolation(f"Duplicate node id {node.id}")
            self.nodes[node.id] = node

        self.links: Dict[Tuple[int, int], Link] = {}
        self.adjacency: Dict[int, List[Tuple[int, float]]] = {node_id: [] for node_id in self.nodes}
        for link in sorted(links, key=lambda l: l.endpoints):
            if link.u not in self.nodes or link.v not in self.nodes:
                raise InvariantViolation(f"Link {link.u}-{link.v} references an unknown node")
            if link.endpoints in self.links:
                raise InvariantViolation(f"More than one link between {link.u} and {link.v}")
            self.links[link.endpoints] = link
            self.adjacency[link.u].append((link.v, link.latency))
            self.adjacency[link.v].append((link.u, link.latency))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return self.seed == other.seed and self.nodes == other.nodes and self.links == other.links

    def __repr__(self) -> str:
        return f"Topology(nodes={len(self.nodes)}, links={len(self.links)}, seed={self.seed})"

    def node(self, node_id: int) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"Node {node_id} is not in the topology") from None

    def end_hosts(self) -> List[int]:
        return [n.id for n in self.nodes.values() if n.kind is NodeKind.END_HOST]

    def access_bandwidths(self) -> Dict[int, float]:
        return {n.id: n.access_bandwidth for n in self.nodes.values() if n.kind is NodeKind.END_HOST}

    def edge_list(self) -> List[Tuple[int, int, float, float]]:
        return [(l.u, l.v, l.bandwidth, l.latency) for l in self.links.values()]

    def link_class(self, link: Link) -> LinkClass:
        kinds = {self.nodes[link.u].kind, self.nodes[link.v].kind}
        if NodeKind.END_HOST in kinds:
            return LinkClass.ACCESS
        if kinds == {NodeKind.TRANSIT_ROUTER}:
            return LinkClass.TRANSIT_TRANSIT
        if kinds == {NodeKind.STUB_ROUTER}:
            return LinkClass.STUB_STUB
        return LinkClass.TRANSIT_STUB

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        for node in self.nodes.values():
            graph.add_node(node.id, kind=node.kind.value)
        for link in self.links.values():
            graph.add_edge(link.u, link.v, latency=link.latency, bandwidth=link.bandwidth)
        return graph

    def validate(self) -> None:
        """
        Checks the transit-stub invariants

        Raises:
            InvariantViolation: on dense-id, connectivity, access-link or hierarchy failures
        """
        if list(self.nodes) != list(range(len(self.nodes))):
            raise InvariantViolation("Node ids must be dense, 0..n-1")
        if not self.nodes:
            raise InvariantViolation("Topology has no nodes")
        if not nx.is_connected(self.to_networkx()):
            raise InvariantViolation("Topology is not connected")

        for node in self.nodes.values():
            neighbours = self.adjacency[node.id]
            if node.kind is NodeKind.END_HOST:
                if len(neighbours) != 1:
                    raise InvariantViolation(
                        f"End host {node.id} must have exactly one link, has {len(neighbours)}"
                    )
                router = neighbours[0][0]
                if self.nodes[router].kind is not NodeKind.STUB_ROUTER:
                    raise InvariantViolation(f"End host {node.id} must attach to a stub router")
                link = self.links[tuple(sorted((node.id, router)))]
                if link.bandwidth != node.access_bandwidth:
                    raise InvariantViolation(
                        f"Access link of host {node.id} has bandwidth {link.bandwidth}, "
                        f"host declares {node.access_bandwidth}"
                    )
            elif node.kind is NodeKind.TRANSIT_ROUTER:
                for neighbour, _ in neighbours:
                    if self.nodes[neighbour].kind is NodeKind.END_HOST:
                        raise InvariantViolation(f"Transit router {node.id} links directly to host {neighbour}")


def _draw_latency(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    low, high = bounds
    return float(rng.uniform(low, high)) if high > low else float(low)


def _draw_bandwidth(rng: np.random.Generator, values: Sequence[float]) -> float:
    return float(values[int(rng.integers(len(values)))])


def _mesh(rng: np.random.Generator, ids: List[int], latency: Tuple[float, float],
          bandwidth: Sequence[float], chord_probability: float) -> List[Link]:
    """Ring over the domain's routers plus random chords"""
    n = len(ids)
    links = []
    if n == 2:
        links.append(Link(ids[0], ids[1], _draw_bandwidth(rng, bandwidth), _draw_latency(rng, latency)))
    elif n > 2:
        for i in range(n):
            links.append(Link(ids[i], ids[(i + 1) % n], _draw_bandwidth(rng, bandwidth),
                              _draw_latency(rng, latency)))
        for i in range(n):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if rng.random() < chord_probability:
                    links.append(Link(ids[i], ids[j], _draw_bandwidth(rng, bandwidth),
                                      _draw_latency(rng, latency)))
    return links


def generate_transit_stub(params: TSParams) -> Topology:
    """
    Builds a hierarchical transit-stub topology

    Routers get ids 0..routers-1 (transit routers first), end hosts follow.
    Each stub domain hangs off one transit router through its first stub
    router; each stub router serves hosts_per_stub_router end hosts.

    Args:
        params: Generator parameters, including the seed

    Returns:
        A validated Topology
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    nodes: List[Node] = []
    links: List[Link] = []

    def new_node(kind: NodeKind, bandwidth: Optional[float] = None) -> int:
        node = Node(len(nodes), kind, bandwidth)
        nodes.append(node)
        return node.id

    domains = []
    for _ in range(params.transit_domains):
        ids = [new_node(NodeKind.TRANSIT_ROUTER) for _ in range(params.transit_nodes_per_domain)]
        links.extend(_mesh(rng, ids, params.transit_transit_latency,
                           params.transit_transit_bandwidth, params.chord_probability))
        domains.append(ids)

    # Gateways of consecutive transit domains are joined; more than two domains form a ring
    if len(domains) > 1:
        pairs = [(d, d + 1) for d in range(len(domains) - 1)]
        if len(domains) > 2:
            pairs.append((len(domains) - 1, 0))
        for a, b in pairs:
            links.append(Link(domains[a][0], domains[b][0],
                              _draw_bandwidth(rng, params.transit_transit_bandwidth),
                              _draw_latency(rng, params.transit_transit_latency)))

    stub_routers: List[int] = []
    for domain in domains:
        for transit in domain:
            for _ in range(params.stub_domains_per_transit_node):
                ids = [new_node(NodeKind.STUB_ROUTER) for _ in range(params.stub_routers_per_stub)]
                links.extend(_mesh(rng, ids, params.stub_stub_latency,
                                   params.stub_stub_bandwidth, params.chord_probability))
                links.append(Link(transit, ids[0], _draw_bandwidth(rng, params.transit_stub_bandwidth),
                                  _draw_latency(rng, params.transit_stub_latency)))
                stub_routers.extend(ids)

    mix_bandwidths = [float(bw) for bw, _ in params.access_bandwidth_mix]
    mix_probabilities = np.array([p for _, p in params.access_bandwidth_mix], dtype=float)
    mix_probabilities = mix_probabilities / mix_probabilities.sum()
    for router in stub_routers:
        for _ in range(params.hosts_per_stub_router):
            bandwidth = mix_bandwidths[int(rng.choice(len(mix_bandwidths), p=mix_probabilities))]
            host = new_node(NodeKind.END_HOST, bandwidth)
            links.append(Link(router, host, bandwidth, _draw_latency(rng, params.access_latency)))

    topology = Topology(nodes, links, seed=params.seed, params=params)
    topology.validate()
    return topology


def validate_no_core_bottleneck(topology: Topology) -> ValidationReport:
    """
    Checks that every non-access link is at least as fast as the fastest access link

    Returns:
        ValidationReport listing the violating links
    """
    access = topology.access_bandwidths()
    max_access = max(access.values(), default=0.0)
    violations = tuple(
        link for link in topology.links.values()
        if topology.link_class(link) is not LinkClass.ACCESS and link.bandwidth < max_access
    )
    return ValidationReport(passed=not violations, max_access_bandwidth=max_access, violations=violations)


def shortest_path_latency(topology: Topology, src: int) -> Dict[int, float]:
    """
    Single-source shortest one-way latency (Dijkstra, link latency as weight)

    Args:
        topology: Connected topology
        src: Source node id

    Returns:
        Mapping node id -> latency in seconds; src maps to 0
    """
    if src not in topology.nodes:
        raise UnknownNode(f"Node {src} is not in the topology")
    adjacency = topology.adjacency
    dist: Dict[int, float] = {src: 0.0}
    done = set()
    heap = [(0.0, src)]
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        for neighbour, latency in adjacency[node]:
            candidate = d + latency
            if candidate < dist.get(neighbour, math.inf):
                dist[neighbour] = candidate
                heapq.heappush(heap, (candidate, neighbour))
    return dist


class LatencyTable:
    """
    Symmetric end-host to end-host one-way latency table

    One row per host, so storage grows linearly per host.
    """

    def __init__(self, hosts: Sequence[int], rows: Sequence[Sequence[float]]):
        self.hosts: Tuple[int, ...] = tuple(hosts)
        self._index = {host: i for i, host in enumerate(self.hosts)}
        if len(self._index) != len(self.hosts):
            raise InvariantViolation("Latency table hosts must be unique")
        self._rows: List[List[float]] = [[float(x) for x in row] for row in rows]
        n = len(self.hosts)
        if len(self._rows) != n or any(len(row) != n for row in self._rows):
            raise InvariantViolation(f"Latency table must be {n}x{n}")
        for i in range(n):
            if self._rows[i][i] != 0.0:
                raise InvariantViolation(f"Latency of host {self.hosts[i]} to itself must be 0")
            for j in range(i + 1, n):
                if self._rows[i][j] != self._rows[j][i] or self._rows[i][j] < 0:
                    raise InvariantViolation(
                        f"Latency between {self.hosts[i]} and {self.hosts[j]} must be symmetric and >= 0"
                    )

    @classmethod
    def from_pairs(cls, hosts: Sequence[int], pairs: Mapping[Tuple[int, int], float]) -> "LatencyTable":
        """Builds a table from unordered pair latencies; missing pairs are an error"""
        index = {host: i for i, host in enumerate(hosts)}
        rows = [[0.0] * len(hosts) for _ in hosts]
        for (a, b), latency in pairs.items():
            rows[index[a]][index[b]] = rows[index[b]][index[a]] = float(latency)
        for i, a in enumerate(hosts):
            for j in range(i + 1, len(hosts)):
                b = hosts[j]
                if (a, b) not in pairs and (b, a) not in pairs:
                    raise InvariantViolation(f"No latency given for pair ({a}, {b})")
        return cls(hosts, rows)

    @classmethod
    def uniform(cls, hosts: Sequence[int], latency: float = 0.0) -> "LatencyTable":
        n = len(hosts)
        return cls(hosts, [[0.0 if i == j else float(latency) for j in range(n)] for i in range(n)])

    def __len__(self) -> int:
        return len(self.hosts)

    def __contains__(self, host: int) -> bool:
        return host in self._index

    def __getitem__(self, pair: Tuple[int, int]) -> float:
        return self.latency(*pair)

    def latency(self, a: int, b: int) -> float:
        try:
            return self._rows[self._index[a]][self._index[b]]
        except KeyError as err:
            raise UnknownNode(f"Host {err.args[0]} is not in the latency table") from None

    def rtt(self, a: int, b: int) -> float:
        return 2.0 * self.latency(a, b)

    def row(self, host: int) -> List[float]:
        if host not in self._index:
            raise UnknownNode(f"Host {host} is not in the latency table")
        return list(self._rows[self._index[host]])

    def as_array(self) -> np.ndarray:
        return np.array(self._rows, dtype=float).reshape(len(self.hosts), len(self.hosts))


def build_latency_table(topology: Topology) -> LatencyTable:
    """Runs one shortest-path search per end host and fills the upper triangle from it"""
    hosts = topology.end_hosts()
    n = len(hosts)
    rows = [[0.0] * n for _ in range(n)]
    for i, host in enumerate(hosts):
        dist = shortest_path_latency(topology, host)
        for j in range(i + 1, n):
            latency = dist.get(hosts[j])
            if latency is None:
                raise InvariantViolation(f"Host {hosts[j]} is unreachable from host {host}")
            rows[i][j] = rows[j][i] = latency
    return LatencyTable(hosts, rows)


def topology_stats(table: LatencyTable) -> TopologyStats:
    """Average and maximum round-trip time over distinct unordered host pairs"""
    n = len(table)
    if n < 2:
        raise EmptyTable("Latency statistics need at least two hosts")
    upper = table.as_array()[np.triu_indices(n, k=1)]
    return TopologyStats(avg_rtt=2.0 * float(upper.mean()), max_rtt=2.0 * float(upper.max()), host_count=n)


def _format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e18:
        return str(int(value))
    return repr(float(value))


def dumps_topology(topology: Topology) -> str:
    """Canonical text form: header, nodes then links, both in ascending id order"""
    lines = [f"{FILE_HEADER} seed={topology.seed}"]
    for node in topology.nodes.values():
        line = f"node {node.id} {node.kind.value}"
        if node.access_bandwidth is not None:
            line += f" bw={_format_number(node.access_bandwidth)}"
        lines.append(line)
    for link in topology.links.values():
        lines.append(
            f"link {link.u} {link.v} bw={_format_number(link.bandwidth)} lat={_format_number(link.latency)}"
        )
    return "\n".join(lines) + "\n"


def _parse_keyed(token: str, key: str, line_no: int) -> float:
    prefix = key + "="
    if not token.startswith(prefix):
        raise ParseError(line_no, f"expected '{prefix}<value>', got '{token}'")
    try:
        return float(token[len(prefix):])
    except ValueError:
        raise ParseError(line_no, f"bad number in '{token}'") from None


def _parse_int(token: str, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(line_no, f"expected an integer node id, got '{token}'") from None


def loads_topology(text: str, validate: bool = True) -> Topology:
    """
    Parses the canonical text form

    Raises:
        ParseError: malformed line, with its 1-based line number
        InvariantViolation: well-formed file describing an invalid topology
    """
    seed: Optional[int] = None
    nodes: List[Node] = []
    links: List[Link] = []
    known = set()
    kinds = {kind.value: kind for kind in NodeKind}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if seed is None:
            if " ".join(tokens[:2]) != FILE_HEADER or len(tokens) != 3 or not tokens[2].startswith("seed="):
                raise ParseError(line_no, f"expected header '{FILE_HEADER} seed=<int>'")
            try:
                seed = int(tokens[2][len("seed="):])
            except ValueError:
                raise ParseError(line_no, "seed must be an integer") from None
            continue

        if tokens[0] == "node":
            if len(tokens) not in (3, 4):
                raise ParseError(line_no, "expected 'node <id> <kind> [bw=<bits/s>]'")
            node_id = _parse_int(tokens[1], line_no)
            if tokens[2] not in kinds:
                raise ParseError(line_no, f"unknown node kind '{tokens[2]}'")
            bandwidth = _parse_keyed(tokens[3], "bw", line_no) if len(tokens) == 4 else None
            if node_id in known:
                raise ParseError(line_no, f"node {node_id} defined twice")
            nodes.append(Node(node_id, kinds[tokens[2]], bandwidth))
            known.add(node_id)
        elif tokens[0] == "link":
            if len(tokens) != 5:
                raise ParseError(line_no, "expected 'link <id1> <id2> bw=<bits/s> lat=<seconds>'")
            u, v = _parse_int(tokens[1], line_no), _parse_int(tokens[2], line_no)
            for endpoint in (u, v):
                if endpoint not in known:
                    raise ParseError(line_no, f"link references undefined node {endpoint}")
            links.append(Link(u, v, _parse_keyed(tokens[3], "bw", line_no),
                              _parse_keyed(tokens[4], "lat", line_no)))
        else:
            raise ParseError(line_no, f"unknown record type '{tokens[0]}'")

    if seed is None:
        raise ParseError(1, "empty topology file")
    topology = Topology(nodes, links, seed=seed)
    if validate:
        topology.validate()
    return topology


def save_topology(topology: Topology, path: Union[str, Path]) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_topology(topology), encoding="utf-8")
    return path


def load_topology(path: Union[str, Path], validate: bool = True) -> Topology:
    return loads_topology(Path(path).read_text(encoding="utf-8"), validate=validate)

"""
Unit tests for TopologyLibrary
Tests generation, validation, shortest paths, latency tables and the file format
"""
import networkx as nx
import numpy as np
import pytest

from libraries.TopologyLibrary import (
    EmptyTable,
    InvalidParams,
    InvariantViolation,
    LatencyTable,
    Link,
    LinkClass,
    Node,
    NodeKind,
    ParseError,
    Topology,
    TSParams,
    UnknownNode,
    build_latency_table,
    dumps_topology,
    generate_transit_stub,
    load_topology,
    loads_topology,
    save_topology,
    shortest_path_latency,
    topology_stats,
    validate_no_core_bottleneck,
)

MINIMAL = TSParams(transit_domains=1, transit_nodes_per_domain=1, stub_domains_per_transit_node=1,
                   stub_routers_per_stub=1, hosts_per_stub_router=1, seed=3)


def chain_topology() -> Topology:
    """transit 0 - stub 1 - host 2, 20 ms and 5 ms"""
    nodes = [Node(0, NodeKind.TRANSIT_ROUTER), Node(1, NodeKind.STUB_ROUTER),
             Node(2, NodeKind.END_HOST, 1.5e6)]
    links = [Link(0, 1, 1e9, 0.020), Link(1, 2, 1.5e6, 0.005)]
    return Topology(nodes, links, seed=9)


def star_topology(host_latencies, access=1.5e6, core_bandwidth=1e9) -> Topology:
    """One stub router (id 0) with one host per latency entry"""
    nodes = [Node(0, NodeKind.STUB_ROUTER)]
    links = []
    for i, latency in enumerate(host_latencies, start=1):
        nodes.append(Node(i, NodeKind.END_HOST, access))
        links.append(Link(0, i, access, latency))
    return Topology(nodes, links)


@pytest.mark.unit
@pytest.mark.topology
class TestGenerateTransitStub:
    """Test suite for the transit-stub generator"""

    def test_default_params_give_600_nodes(self):
        """Test 60 routers plus 540 hosts with default parameters"""
        topology = generate_transit_stub(TSParams())

        kinds = [node.kind for node in topology.nodes.values()]
        assert len(topology.nodes) == 600
        assert kinds.count(NodeKind.END_HOST) == 540
        assert kinds.count(NodeKind.TRANSIT_ROUTER) == 6
        assert kinds.count(NodeKind.STUB_ROUTER) == 54
        assert TSParams().router_count == 60
        assert TSParams().host_count == 540

    def test_minimal_params_give_chain(self):
        """Test T=Nt=S=R=H=1 gives 3 nodes and 2 links"""
        topology = generate_transit_stub(MINIMAL)

        assert len(topology.nodes) == 3
        assert len(topology.links) == 2
        assert topology.end_hosts() == [2]

    def test_same_seed_same_topology(self):
        """Test generation is deterministic for a fixed seed"""
        params = TSParams(seed=11)

        assert generate_transit_stub(params).edge_list() == generate_transit_stub(params).edge_list()

    def test_different_seed_differs(self):
        """Test the seed changes the drawn latencies"""
        a = generate_transit_stub(TSParams(seed=1))
        b = generate_transit_stub(TSParams(seed=2))

        assert a.edge_list() != b.edge_list()

    def test_hierarchy_and_ranges(self):
        """Test link classes respect their latency ranges and hosts attach to stub routers"""
        params = TSParams(transit_domains=3, transit_nodes_per_domain=3, stub_domains_per_transit_node=2,
                          stub_routers_per_stub=4, hosts_per_stub_router=2, seed=5)
        topology = generate_transit_stub(params)
        ranges = {
            LinkClass.TRANSIT_TRANSIT: params.transit_transit_latency,
            LinkClass.TRANSIT_STUB: params.transit_stub_latency,
            LinkClass.STUB_STUB: params.stub_stub_latency,
            LinkClass.ACCESS: params.access_latency,
        }

        assert nx.is_connected(topology.to_networkx())
        for link in topology.links.values():
            low, high = ranges[topology.link_class(link)]
            assert low <= link.latency <= high
        for host in topology.end_hosts():
            (router, _), = topology.adjacency[host]
            assert topology.node(router).kind is NodeKind.STUB_ROUTER
        assert set(topology.access_bandwidths().values()) <= {1.5e6, 10e6, 45e6}

    @pytest.mark.parametrize("overrides", [
        {"hosts_per_stub_router": 0},
        {"transit_domains": -1},
        {"access_latency": (0.005, 0.001)},
        {"access_bandwidth_mix": ((1e6, 0.5), (2e6, 0.2))},
        {"chord_probability": 1.5},
    ])
    def test_invalid_params(self, overrides):
        """Test out-of-range parameters raise InvalidParams"""
        params = TSParams(**overrides)

        with pytest.raises(InvalidParams):
            generate_transit_stub(params)


@pytest.mark.unit
@pytest.mark.topology
class TestValidateNoCoreBottleneck:
    """Test suite for the no-core-bottleneck check"""

    def test_fast_core_passes(self):
        """Test 1 Gbps core with 1.5 Mbps access passes"""
        report = validate_no_core_bottleneck(chain_topology())

        assert report.passed
        assert report.max_access_bandwidth == 1.5e6
        assert report.violations == ()

    def test_slow_core_link_listed(self):
        """Test a 1 Mbps stub-stub link under 1.5 Mbps access fails"""
        nodes = [Node(0, NodeKind.STUB_ROUTER), Node(1, NodeKind.STUB_ROUTER),
                 Node(2, NodeKind.END_HOST, 1.5e6), Node(3, NodeKind.END_HOST, 1.5e6)]
        slow = Link(0, 1, 1e6, 0.002)
        topology = Topology(nodes, [slow, Link(0, 2, 1.5e6, 0.001), Link(1, 3, 1.5e6, 0.001)])

        report = validate_no_core_bottleneck(topology)

        assert not report.passed
        assert report.violations == (slow,)

    def test_default_topology_passes(self):
        """Test generated topologies satisfy the assumption"""
        assert validate_no_core_bottleneck(generate_transit_stub(TSParams(seed=4))).passed


@pytest.mark.unit
@pytest.mark.topology
class TestShortestPathLatency:
    """Test suite for single-source shortest paths"""

    def test_triangle_prefers_two_hops(self):
        """Test A-B 10 ms, B-C 20 ms, A-C 40 ms gives A->C 30 ms"""
        nodes = [Node(i, NodeKind.TRANSIT_ROUTER) for i in range(3)]
        links = [Link(0, 1, 1e9, 0.010), Link(1, 2, 1e9, 0.020), Link(0, 2, 1e9, 0.040)]

        dist = shortest_path_latency(Topology(nodes, links), 0)

        assert dist[0] == 0.0
        assert dist[2] == pytest.approx(0.030)

    def test_chain(self):
        """Test host -> transit is the sum of both links"""
        dist = shortest_path_latency(chain_topology(), 2)

        assert dist[0] == pytest.approx(0.025)

    def test_unknown_source(self):
        """Test an unknown source raises UnknownNode"""
        with pytest.raises(UnknownNode):
            shortest_path_latency(chain_topology(), 42)


@pytest.mark.unit
@pytest.mark.topology
class TestLatencyTable:
    """Test suite for end-host latency tables"""

    def test_chain_single_host(self):
        """Test a single-host table has only the zero diagonal"""
        table = build_latency_table(chain_topology())

        assert table.hosts == (2,)
        assert table.latency(2, 2) == 0.0

    def test_star_entries(self):
        """Test host-to-host latency sums both access links"""
        table = build_latency_table(star_topology([0.25, 0.5, 0.125]))

        assert table.latency(1, 2) == 0.75
        assert table[(3, 1)] == 0.375
        assert table.rtt(1, 2) == 1.5

    def test_symmetry_on_generated_topology(self):
        """Test symmetry and zero diagonal for 100 random pairs"""
        table = build_latency_table(generate_transit_stub(TSParams(seed=8)))
        rng = np.random.default_rng(0)
        hosts = list(table.hosts)

        for _ in range(100):
            a, b = (hosts[i] for i in rng.choice(len(hosts), size=2, replace=False))
            assert table.latency(a, b) == table.latency(b, a)
            assert table.latency(a, a) == 0.0

    def test_unknown_host(self):
        """Test lookups of unknown hosts raise UnknownNode"""
        table = LatencyTable.uniform([1, 2], 0.01)

        with pytest.raises(UnknownNode):
            table.latency(1, 3)

    def test_asymmetric_rows_rejected(self):
        """Test an asymmetric table is invalid"""
        with pytest.raises(InvariantViolation):
            LatencyTable([1, 2], [[0.0, 0.1], [0.2, 0.0]])

    def test_from_pairs(self):
        """Test building a table from unordered pairs"""
        table = LatencyTable.from_pairs([5, 6, 7], {(5, 6): 0.01, (7, 5): 0.02, (6, 7): 0.03})

        assert table.latency(5, 7) == 0.02
        assert table.row(6) == [0.01, 0.0, 0.03]


@pytest.mark.unit
@pytest.mark.topology
class TestTopologyStats:
    """Test suite for RTT statistics"""

    def test_single_pair(self):
        """Test one pair at 44 ms one-way gives 88 ms RTT"""
        stats = topology_stats(LatencyTable.uniform([1, 2], 0.044))

        assert stats.avg_rtt == pytest.approx(0.088)
        assert stats.max_rtt == pytest.approx(0.088)
        assert stats.host_count == 2

    def test_two_pairs(self):
        """Test pairs at 10 ms and 30 ms give 40 ms average and 60 ms max"""
        table = LatencyTable.from_pairs([1, 2, 3], {(1, 2): 0.010, (1, 3): 0.030, (2, 3): 0.020})

        stats = topology_stats(table)

        assert stats.avg_rtt == pytest.approx(0.040)
        assert stats.max_rtt == pytest.approx(0.060)

    def test_needs_two_hosts(self):
        """Test fewer than two hosts raises EmptyTable"""
        with pytest.raises(EmptyTable):
            topology_stats(LatencyTable.uniform([1]))

    def test_default_topology_within_class_bounds(self):
        """Test default RTTs lie between the smallest and largest possible paths"""
        stats = topology_stats(build_latency_table(generate_transit_stub(TSParams())))

        # two access links at minimum latency, and a loose upper bound over every hop class
        assert stats.avg_rtt >= 2 * 2 * 0.001
        assert stats.max_rtt <= 2 * (2 * 0.003 + 2 * 4 * 0.005 + 2 * 0.010 + 2 * 0.024)
        assert stats.avg_rtt <= stats.max_rtt


@pytest.mark.unit
@pytest.mark.topology
class TestTopologyFile:
    """Test suite for the topology text format"""

    def test_minimal_round_trip(self, tmp_path):
        """Test save then load reproduces the minimal topology and its seed"""
        topology = generate_transit_stub(MINIMAL)
        path = save_topology(topology, tmp_path / "minimal.topo")

        loaded = load_topology(path)

        assert loaded == topology
        assert loaded.seed == 3

    def test_default_round_trip_is_byte_identical(self):
        """Test re-serializing a loaded 600-node topology gives the same text"""
        text = dumps_topology(generate_transit_stub(TSParams(seed=6)))

        assert dumps_topology(loads_topology(text)) == text

    def test_header_format(self):
        """Test the canonical header and record layout"""
        text = dumps_topology(chain_topology())

        assert text.splitlines() == [
            "narses-topo v1 seed=9",
            "node 0 transit",
            "node 1 stub",
            "node 2 host bw=1500000",
            "link 0 1 bw=1000000000 lat=0.02",
            "link 1 2 bw=1500000 lat=0.005",
        ]

    def test_host_with_two_links(self):
        """Test an end host with two links is an invariant violation"""
        text = "\n".join([
            "narses-topo v1 seed=0",
            "node 0 stub",
            "node 1 stub",
            "node 2 host bw=1000000",
            "link 0 1 bw=1000000000 lat=0.001",
            "link 0 2 bw=1000000 lat=0.001",
            "link 1 2 bw=1000000 lat=0.001",
        ])

        with pytest.raises(InvariantViolation):
            loads_topology(text)

    @pytest.mark.parametrize("text, line_no", [
        ("topology v2\n", 1),
        ("narses-topo v1 seed=0\nnode 0 router\n", 2),
        ("narses-topo v1 seed=0\nnode 0 stub\n\nlink 0 1 bw=1 lat=1\n", 4),
        ("narses-topo v1 seed=0\nnode 0 host bw=fast\n", 2),
        ("narses-topo v1 seed=0\nedge 0 1\n", 2),
    ])
    def test_parse_errors_carry_line_numbers(self, text, line_no):
        """Test malformed lines raise ParseError with their line number"""
        with pytest.raises(ParseError) as excinfo:
            loads_topology(text)

        assert excinfo.value.line_no == line_no

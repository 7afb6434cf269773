"""
Acceptance tests for the Narses simulator
Checks the reallocation example, analytic durations, both oracles, invariant
fuzzing, runtime scalability, determinism and topology correctness
"""
import json
import math
import os
import time
from dataclasses import replace

import networkx as nx
import numpy as np
import pytest

from libraries.FlowModelLibrary import (
    FlowSpec,
    NaiveModel,
    Scenario,
    fluid_timestep_oracle,
    global_recompute_oracle,
    run_scenario,
)
from libraries.HarnessLibrary import NONDETERMINISTIC_FIELDS, cmd_run, cmd_sweep, load_scenario_config
from libraries.ScenarioKeywordLibrary import ScenarioKeywordLibrary
from libraries.TopologyLibrary import (
    LatencyTable,
    Link,
    Node,
    NodeKind,
    Topology,
    TSParams,
    build_latency_table,
    generate_transit_stub,
    shortest_path_latency,
    validate_no_core_bottleneck,
)
from utils.helpers import ConfigManager

MBPS = 1e6
ACCESS_CHOICES = (1.5e6, 10e6, 45e6)
SIZE_CHOICES = (10_000, 50_000, 200_000)


def random_latency(rng, hosts):
    n = len(hosts)
    m = rng.uniform(0.001, 0.05, size=(n, n))
    m = (m + m.T) / 2
    np.fill_diagonal(m, 0.0)
    return LatencyTable(hosts, m.tolist())


def random_scenario(rng, max_hosts=10, max_flows=30, poisson=False):
    """Random hosts and flows; sizes repeat, so completions often tie"""
    n_hosts = int(rng.integers(2, max_hosts + 1))
    n_flows = int(rng.integers(1, max_flows + 1))
    hosts = list(range(n_hosts))
    access = {h: float(rng.choice(ACCESS_CHOICES)) for h in hosts}
    sizes = rng.choice(SIZE_CHOICES, size=n_flows)
    if poisson:
        starts = np.cumsum(rng.exponential(1 / 20.0, size=n_flows))
    else:
        starts = np.zeros(n_flows)
    flows = []
    for start, size in zip(starts, sizes):
        src = int(rng.integers(n_hosts))
        dst = (src + int(rng.integers(1, n_hosts))) % n_hosts
        flows.append(FlowSpec(float(start), src, dst, int(size)))
    return Scenario(access, random_latency(rng, hosts), flows)


def open_scenario_config(path):
    return load_scenario_config(path, ConfigManager(env_file=os.devnull))


@pytest.mark.acceptance
@pytest.mark.flowmodel
class TestReallocationExample:
    """Four flows: Z sends b, c, d; X sends a to Y; Y receives a and b"""

    def setup_method(self):
        """Setup for each test method"""
        self.lib = ScenarioKeywordLibrary()
        for name, mbps in (("X", 10), ("Y", 1), ("Z", 3), ("W1", 0.5), ("W2", 0.5)):
            self.lib.add_host(name, mbps)
        for name, src, dst, size in (("a", "X", "Y", 62500), ("b", "Z", "Y", 250000),
                                     ("c", "Z", "W1", 125000), ("d", "Z", "W2", 187500)):
            self.lib.add_flow(name, src, dst, size)

    def test_rate_of_b_follows_receiver_load(self):
        """Test rate(b) is min(bw(Z)/3, bw(Y)/2) before and min(bw(Z)/3, bw(Y)/1) after a completes"""
        started = time.perf_counter()
        self.lib.run_simulation_until(0.999)
        assert self.lib.get_flow_rate("b") == min(3 * MBPS / 3, 1 * MBPS / 2)
        before = {n: (self.lib.get_flow_rate(n), self.lib.get_flow_version(n)) for n in ("c", "d")}

        self.lib.run_simulation_until(1.0)

        assert "a" in self.lib.completions
        assert self.lib.get_flow_rate("b") == min(3 * MBPS / 3, 1 * MBPS / 1)
        assert {n: (self.lib.get_flow_rate(n), self.lib.get_flow_version(n)) for n in ("c", "d")} == before
        assert time.perf_counter() - started < 1.0

    def test_completion_times(self):
        """Test a, c, b, d complete at 1.0, 2.0, 2.5 and 3.0 s after ten events"""
        assert self.lib.run_simulation() == 10
        assert self.lib.completions == {"a": 1.0, "c": 2.0, "b": 2.5, "d": 3.0}
        self.lib.stale_events_should_be(2)


@pytest.mark.acceptance
@pytest.mark.flowmodel
class TestAnalyticSingleFlow:
    """Single-flow durations against latency + 8*size/min(bw)"""

    @pytest.mark.parametrize("model_class", [None, NaiveModel], ids=["bandwidth_share", "naive"])
    def test_random_parameterizations(self, model_class):
        """Test 100 random single flows within 1e-9 relative error"""
        rng = np.random.default_rng(100)
        for _ in range(100):
            access = {0: float(rng.uniform(0.1, 100.0)) * MBPS, 1: float(rng.uniform(0.1, 100.0)) * MBPS}
            latency = float(rng.uniform(0.0, 0.2))
            size = int(rng.integers(1, 10_000_000))
            start = float(rng.uniform(0.0, 5.0))
            scenario = Scenario(access, LatencyTable.uniform([0, 1], latency), [FlowSpec(start, 0, 1, size)])
            kwargs = {} if model_class is None else {"model_class": model_class}

            delivered = run_scenario(scenario, **kwargs).completions[0]

            expected = latency + 8 * size / min(access.values())
            assert math.isclose(delivered - start, expected, rel_tol=1e-9)


@pytest.mark.acceptance
@pytest.mark.oracle
class TestLocalityOracle:
    """Local reallocation against recomputing every flow on every event"""

    def test_200_random_scenarios_bit_identical(self):
        """Test completion times are identical to the last bit"""
        rng = np.random.default_rng(7)
        for i in range(200):
            scenario = random_scenario(rng, poisson=bool(i % 2))

            local = run_scenario(scenario, check_invariants=True).completions

            assert local == global_recompute_oracle(scenario), f"scenario {i}"
            assert len(local) == len(scenario.flows)


@pytest.mark.acceptance
@pytest.mark.oracle
class TestFluidOracle:
    """Event-driven completions against fixed-step fluid integration"""

    @staticmethod
    def small_scenario(rng):
        n_hosts = int(rng.integers(3, 6))
        hosts = list(range(n_hosts))
        access = {h: float(rng.choice([1e6, 2e6, 4e6, 8e6])) for h in hosts}
        flows = []
        for _ in range(int(rng.integers(2, 4))):
            src = int(rng.integers(n_hosts))
            dst = (src + int(rng.integers(1, n_hosts))) % n_hosts
            # starts on a 10 ms grid so every step size divides them
            flows.append(FlowSpec(int(rng.integers(0, 21)) * 0.01, src, dst, int(rng.integers(5000, 50000))))
        return Scenario(access, LatencyTable.uniform(hosts, float(rng.uniform(0.001, 0.05))), flows)

    @staticmethod
    def deviation(exact, fluid):
        return max(abs(exact[i] - fluid[i]) for i in exact)

    def test_converges_with_step(self):
        """Test deviation within 2*dt at 1 ms and no larger at 0.5 ms, per scenario"""
        rng = np.random.default_rng(50)
        for i in range(50):
            scenario = self.small_scenario(rng)
            exact = run_scenario(scenario, check_invariants=True).completions
            coarse = self.deviation(exact, fluid_timestep_oracle(scenario, 0.001))
            fine = self.deviation(exact, fluid_timestep_oracle(scenario, 0.0005))

            assert coarse <= 2 * 0.001, f"scenario {i}"
            assert fine <= coarse + 1e-12, f"scenario {i}"


@pytest.mark.acceptance
@pytest.mark.flowmodel
class TestInvariantFuzz:
    """Allocation invariants at every event boundary over random runs"""

    def test_1000_random_runs(self):
        """Test capacity, monotonicity, byte accounting and no clamps across 1000 runs"""
        rng = np.random.default_rng(1000)
        for i in range(1000):
            scenario = random_scenario(rng, max_hosts=8, max_flows=20, poisson=bool(i % 2))

            # check_invariants raises on the first violated event
            result = run_scenario(scenario, check_invariants=True)

            assert result.model.settle_clamps == 0, f"run {i}"
            assert result.model.flows_delivered == len(scenario.flows)
            assert not result.model.flows


@pytest.mark.acceptance
@pytest.mark.performance
@pytest.mark.slow
class TestScalability:
    """600-node topology, 10000 simultaneous flows, sizes from 10 KB to 200 KB"""

    def test_runtime_independent_of_flow_size(self, tmp_path):
        """Test every size finishes under 10 s with max/min runtime at most 1.5"""
        config = open_scenario_config("config/default.cfg")

        rows = cmd_sweep(config, str(tmp_path), sizes=[10000, 50000, 100000, 200000])

        runtimes = [row["wall_clock_runtime_s"] for row in rows]
        assert all(row["flow_count"] == 10000 for row in rows)
        assert max(runtimes) < 10.0
        assert max(runtimes) / min(runtimes) <= 1.5

    def test_mean_duration_grows_with_size(self, tmp_path):
        """Test larger flows take longer on average"""
        config = open_scenario_config("config/default.cfg")

        rows = cmd_sweep(config, str(tmp_path), sizes=[10000, 20000, 40000])

        means = [row["mean_duration_s"] for row in rows]
        assert means == sorted(means)


@pytest.mark.acceptance
@pytest.mark.harness
class TestDeterminism:
    """Identical configuration and seed give identical outputs"""

    def test_two_runs_identical(self, tmp_path):
        """Test byte-identical flows.csv and equal stats.json apart from runtime fields"""
        config = replace(open_scenario_config("config/default.cfg"), flow_count=2000)

        for name in ("first", "second"):
            cmd_run(config, str(tmp_path / name))

        assert (tmp_path / "first" / "flows.csv").read_bytes() == (tmp_path / "second" / "flows.csv").read_bytes()
        stats = []
        for name in ("first", "second"):
            data = json.loads((tmp_path / name / "stats.json").read_text())
            stats.append({k: v for k, v in data.items() if k not in NONDETERMINISTIC_FIELDS})
        assert stats[0] == stats[1]


@pytest.mark.acceptance
@pytest.mark.topology
@pytest.mark.oracle
class TestTopologyCorrectness:
    """Shortest paths against Floyd-Warshall and generated-topology checks"""

    @staticmethod
    def random_graph(rng):
        """Connected router graph with latencies that are multiples of 1/1024 s"""
        n = int(rng.integers(2, 51))
        nodes = [Node(i, NodeKind.STUB_ROUTER) for i in range(n)]
        edges = {}
        for v in range(1, n):
            edges[(int(rng.integers(0, v)), v)] = int(rng.integers(1, 101)) / 1024
        for _ in range(int(rng.integers(0, 2 * n))):
            u, v = sorted(int(x) for x in rng.choice(n, size=2, replace=False))
            edges.setdefault((u, v), int(rng.integers(1, 101)) / 1024)
        links = [Link(u, v, 1e9, latency) for (u, v), latency in edges.items()]
        return Topology(nodes, links)

    def test_shortest_paths_match_floyd_warshall(self):
        """Test 20 random graphs up to 50 nodes match exactly"""
        rng = np.random.default_rng(8)
        for _ in range(20):
            topology = self.random_graph(rng)
            order = sorted(topology.nodes)
            oracle = nx.floyd_warshall_numpy(topology.to_networkx(), nodelist=order, weight="latency")

            for i, src in enumerate(order):
                dist = shortest_path_latency(topology, src)
                assert [dist[dst] for dst in order] == oracle[i].tolist()

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_generated_topologies_pass_validation(self, seed):
        """Test generated topologies have no core bottleneck and a symmetric zero-diagonal table"""
        params = TSParams(transit_nodes_per_domain=3, stub_domains_per_transit_node=2,
                          stub_routers_per_stub=3, hosts_per_stub_router=2, seed=seed)
        topology = generate_transit_stub(params)

        assert validate_no_core_bottleneck(topology).passed
        table = build_latency_table(topology).as_array()
        assert np.array_equal(table, table.T)
        assert not np.diag(table).any()
        assert (table[~np.eye(len(table), dtype=bool)] > 0).all()

    @pytest.mark.slow
    def test_600_node_table_matches_floyd_warshall(self):
        """Test the default topology's host latencies against all-pairs shortest paths"""
        topology = generate_transit_stub(TSParams())
        table = build_latency_table(topology)
        order = sorted(topology.nodes)
        index = {node: i for i, node in enumerate(order)}
        oracle = nx.floyd_warshall_numpy(topology.to_networkx(), nodelist=order, weight="latency")

        hosts = [index[h] for h in table.hosts]
        np.testing.assert_allclose(table.as_array(), oracle[np.ix_(hosts, hosts)], rtol=1e-12, atol=0)

"""
Harness Library for the Narses flow-level network simulator
Scenario configuration, random workloads, metric aggregation and the
gen-topology / run / sweep / scale commands
"""
import functools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml
from jsonschema import Draft7Validator

from libraries.FlowModelLibrary import DeliveryRecord, FlowSpec, ModelKind, create_model
from libraries.SimCoreLibrary import FlowStart, NarsesError, RunSummary, Simulator
from libraries.TopologyLibrary import (
    LatencyTable,
    Topology,
    TopologyStats,
    TSParams,
    ValidationReport,
    build_latency_table,
    generate_transit_stub,
    load_topology,
    save_topology,
    topology_stats,
    validate_no_core_bottleneck,
)
from libraries.TransportLibrary import Message, Transport
from utils.helpers import ConfigManager, Logger, ResultManager

try:
    import resource
except ImportError:  # not available on Windows
    resource = None

DATA_PORT = 80
CSV_HEADER = ("flow_id", "src", "dst", "size_bytes", "start_s", "delivered_s", "duration_s")
SWEEP_HEADER = ("size_bytes", "seed", "flow_count", "mean_duration_s", "median_duration_s",
                "p95_duration_s", "max_duration_s", "wall_clock_runtime_s", "events_dispatched")
SCALE_HEADER = ("flow_count", "flow_size", "wall_clock_runtime_s", "events_dispatched",
                "queue_high_water_mark", "peak_active_flows", "peak_rss_kb")
# Fields that vary between identical runs
NONDETERMINISTIC_FIELDS = ("wall_clock_runtime_s", "peak_rss_kb")
DEFAULT_SCALE_COUNTS = (5000, 10000, 20000, 40000)


# Custom exceptions for harness operations
class HarnessError(NarsesError):
    """Base exception for harness operations"""


class ConfigError(HarnessError):
    """Raised when a configuration cannot be read or fails validation"""


class ValidationFailed(HarnessError):
    """Raised when a topology breaks the no-core-bottleneck assumption"""

    def __init__(self, report: ValidationReport):
        super().__init__(
            f"{len(report.violations)} core link(s) slower than the fastest access link "
            f"({report.max_access_bandwidth:g} bits/s)"
        )
        self.report = report


class EmptyInput(HarnessError):
    """Raised when statistics are requested over no records"""


class TooFewHosts(HarnessError):
    """Raised when a workload needs more end hosts than the topology has"""


class Arrival(Enum):
    ALL_AT_ONCE = "all_at_once"
    POISSON = "poisson"


CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "topology": {"type": "string", "minLength": 1},
        "transit": {"type": "integer", "minimum": 1},
        "transit_nodes": {"type": "integer", "minimum": 1},
        "stubs": {"type": "integer", "minimum": 1},
        "stub_routers": {"type": "integer", "minimum": 1},
        "hosts": {"type": "integer", "minimum": 1},
        "chord_probability": {"type": "number", "minimum": 0, "maximum": 1},
        "topology_seed": {"type": "integer"},
        "model": {"enum": [kind.value for kind in ModelKind]},
        "seed": {"type": "integer"},
        "flow_count": {"type": "integer", "minimum": 1},
        "flow_size": {
            "oneOf": [
                {"type": "integer", "exclusiveMinimum": 0},
                {"type": "array", "minItems": 1, "items": {"type": "integer", "exclusiveMinimum": 0}},
            ]
        },
        "arrival": {"enum": [arrival.value for arrival in Arrival]},
        "poisson_rate": {"type": "number", "exclusiveMinimum": 0},
        "poisson_horizon": {"type": "number", "exclusiveMinimum": 0},
        "setup_delay": {"type": "number", "minimum": 0},
        "check_invariants": {"type": "boolean"},
        "jobs": {"type": "integer", "minimum": 1},
    },
}

_INT_KEYS = {"transit", "transit_nodes", "stubs", "stub_routers", "hosts", "topology_seed",
             "seed", "flow_count", "jobs"}
_FLOAT_KEYS = {"chord_probability", "poisson_rate", "poisson_horizon", "setup_delay"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@functools.lru_cache(maxsize=None)
def get_logger() -> Logger:
    return Logger('narses')


def coerce_config(raw: Mapping[str, Any]) -> Dict[str, Any]:
    """Turns the string values of a .cfg file into the types the schema expects"""
    data: Dict[str, Any] = {}
    for key, value in raw.items():
        if isinstance(value, str):
            text = value.strip()
            try:
                if key in _INT_KEYS:
                    value = int(text)
                elif key in _FLOAT_KEYS:
                    value = float(text)
                elif key == "check_invariants" and text.lower() in _TRUE | _FALSE:
                    value = text.lower() in _TRUE
                elif key == "flow_size":
                    sizes = [int(part) for part in text.split(",") if part.strip()]
                    value = sizes[0] if len(sizes) == 1 else sizes
                elif key in ("model", "arrival"):
                    value = text.lower()
            except ValueError:
                raise ConfigError(f"{key}: cannot read {value!r} as a number") from None
        data[key] = value
    return data


@dataclass(frozen=True)
class ScenarioConfig:
    """One scenario: topology source, model, workload and run options"""
    topology: str = "generate"
    params: TSParams = field(default_factory=TSParams)
    model: ModelKind = ModelKind.BANDWIDTH_SHARE
    seed: int = 0
    flow_count: int = 10000
    flow_sizes: Tuple[int, ...] = (200_000,)
    arrival: Arrival = Arrival.ALL_AT_ONCE
    poisson_rate: float = 100.0
    poisson_horizon: float = 10.0
    setup_delay: float = 0.0
    check_invariants: bool = False
    jobs: int = 1
    base_dir: str = "."

    @property
    def flow_size(self) -> int:
        return self.flow_sizes[0]

    @property
    def generates_topology(self) -> bool:
        return self.topology == "generate"

    def topology_path(self) -> str:
        return os.path.join(self.base_dir, self.topology)

    def for_size(self, size: int, seed: int) -> "ScenarioConfig":
        return replace(self, flow_sizes=(size,), seed=seed)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any], base_dir: str = ".") -> "ScenarioConfig":
        """
        Builds a config from a raw key/value mapping

        Raises:
            ConfigError: unknown keys, wrong types or out-of-range values
        """
        data = coerce_config(raw)
        errors = sorted(Draft7Validator(CONFIG_SCHEMA).iter_errors(data), key=lambda e: [str(p) for p in e.path])
        if errors:
            first = errors[0]
            where = ".".join(str(part) for part in first.path) or "config"
            raise ConfigError(f"{where}: {first.message}")

        defaults = TSParams()
        params = replace(
            defaults,
            transit_domains=data.get("transit", defaults.transit_domains),
            transit_nodes_per_domain=data.get("transit_nodes", defaults.transit_nodes_per_domain),
            stub_domains_per_transit_node=data.get("stubs", defaults.stub_domains_per_transit_node),
            stub_routers_per_stub=data.get("stub_routers", defaults.stub_routers_per_stub),
            hosts_per_stub_router=data.get("hosts", defaults.hosts_per_stub_router),
            chord_probability=float(data.get("chord_probability", defaults.chord_probability)),
            seed=data.get("topology_seed", defaults.seed),
        )
        sizes = data.get("flow_size", 200_000)
        return cls(
            topology=data.get("topology", "generate"),
            params=params,
            model=ModelKind(data.get("model", ModelKind.BANDWIDTH_SHARE.value)),
            seed=data.get("seed", 0),
            flow_count=data.get("flow_count", 10000),
            flow_sizes=tuple(sizes) if isinstance(sizes, list) else (sizes,),
            arrival=Arrival(data.get("arrival", Arrival.ALL_AT_ONCE.value)),
            poisson_rate=float(data.get("poisson_rate", 100.0)),
            poisson_horizon=float(data.get("poisson_horizon", 10.0)),
            setup_delay=float(data.get("setup_delay", 0.0)),
            check_invariants=data.get("check_invariants", False),
            jobs=data.get("jobs", 1),
            base_dir=base_dir,
        )


def load_scenario_config(path: str, manager: Optional[ConfigManager] = None) -> ScenarioConfig:
    """Reads a .cfg/.json/.yaml scenario file plus environment overrides"""
    manager = manager or ConfigManager()
    try:
        raw = manager.load_config(path)
    except OSError as err:
        raise ConfigError(f"Cannot read config {path}: {err}") from err
    except (ValueError, yaml.YAMLError) as err:
        raise ConfigError(f"Cannot parse config {path}: {err}") from err
    config = ScenarioConfig.from_mapping(raw, base_dir=os.path.dirname(os.path.abspath(path)))
    get_logger().info("Loaded scenario config", path=path, model=config.model.value,
                      seed=config.seed, flow_count=config.flow_count)
    return config


@dataclass(frozen=True)
class FlowRecord:
    """One output row"""
    flow_id: int
    src: int
    dst: int
    size_bytes: int
    start_s: float
    delivered_s: float

    @property
    def duration_s(self) -> float:
        return self.delivered_s - self.start_s

    @classmethod
    def from_delivery(cls, record: DeliveryRecord) -> "FlowRecord":
        return cls(record.flow_id, record.src, record.dst, record.size, record.start, record.delivered)

    def csv_row(self) -> Tuple[Any, ...]:
        return (self.flow_id, self.src, self.dst, self.size_bytes,
                f"{self.start_s:.9f}", f"{self.delivered_s:.9f}", f"{self.duration_s:.9f}")


@dataclass(frozen=True)
class AggregateStats:
    flow_count: int
    mean_duration_s: float
    median_duration_s: float
    p95_duration_s: float
    max_duration_s: float
    events_dispatched: int = 0
    queue_high_water_mark: int = 0
    rate_recomputations: int = 0
    stale_events: int = 0
    settle_clamps: int = 0
    peak_active_flows: int = 0
    wall_clock_runtime_s: float = 0.0
    peak_rss_kb: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def deterministic_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if k not in NONDETERMINISTIC_FIELDS}


def nearest_rank(sorted_values: Sequence[float], percent: int) -> float:
    """Nearest-rank percentile of an ascending sequence"""
    rank = max(1, (percent * len(sorted_values) + 99) // 100)
    return sorted_values[rank - 1]


def aggregate(records: Sequence[FlowRecord]) -> AggregateStats:
    """
    Duration statistics over flow records

    Raises:
        EmptyInput: no records
    """
    if not records:
        raise EmptyInput("Cannot aggregate zero flow records")
    durations = np.sort(np.array([r.duration_s for r in records], dtype=float))
    return AggregateStats(
        flow_count=len(records),
        mean_duration_s=float(np.mean(durations)),
        median_duration_s=float(np.median(durations)),
        p95_duration_s=float(nearest_rank(durations, 95)),
        max_duration_s=float(durations[-1]),
    )


def random_workload(config: ScenarioConfig, hosts: Sequence[int], seed: int,
                    size: Optional[int] = None) -> List[FlowSpec]:
    """
    Draws flows between uniformly random distinct end-host pairs

    Args:
        config: Arrival process, flow count and size
        hosts: Candidate end hosts
        seed: Generator seed
        size: Flow size override in bytes

    Returns:
        FlowSpecs in start-time order
    """
    hosts = list(hosts)
    if len(hosts) < 2:
        raise TooFewHosts(f"A workload needs at least 2 end hosts, got {len(hosts)}")
    size = config.flow_size if size is None else size
    rng = np.random.default_rng(seed)

    if config.arrival is Arrival.ALL_AT_ONCE:
        starts = [0.0] * config.flow_count
    else:
        starts = []
        t = 0.0
        scale = 1.0 / config.poisson_rate
        while len(starts) < config.flow_count:
            t += float(rng.exponential(scale))
            if t > config.poisson_horizon:
                break
            starts.append(t)

    n = len(starts)
    src = rng.integers(0, len(hosts), size=n)
    # offset in 1..H-1 keeps dst uniform over the other hosts
    dst = (src + rng.integers(1, len(hosts), size=n)) % len(hosts)
    return [FlowSpec(start, hosts[int(s)], hosts[int(d)], int(size)) for start, s, d in zip(starts, src, dst)]


@dataclass
class Network:
    """A validated topology with its end-host latency table"""
    topology: Topology
    latency: LatencyTable
    validation: ValidationReport

    @property
    def access(self) -> Dict[int, float]:
        return self.topology.access_bandwidths()


def build_network(config: ScenarioConfig) -> Network:
    """Generates or loads the topology and precomputes host latencies"""
    if config.generates_topology:
        topology = generate_transit_stub(config.params)
    else:
        topology = load_topology(config.topology_path())
    report = validate_no_core_bottleneck(topology)
    if not report.passed:
        get_logger().error("Topology fails bottleneck validation", violations=len(report.violations))
        raise ValidationFailed(report)
    network = Network(topology, build_latency_table(topology), report)
    get_logger().info("Topology ready", nodes=len(topology.nodes), links=len(topology.links),
                      hosts=len(network.latency))
    return network


def peak_rss_kb() -> Optional[int]:
    if resource is None:
        return None
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)


@dataclass
class RunResult:
    records: List[FlowRecord]
    stats: AggregateStats
    summary: RunSummary
    counters: Dict[str, int] = field(default_factory=dict)


def simulate(config: ScenarioConfig, network: Network, flows: Sequence[FlowSpec]) -> RunResult:
    """
    Runs one workload through the transport and the configured model

    Every end host listens on DATA_PORT; each FlowSpec is sent at its start
    time.
    """
    started = time.perf_counter()
    sim = Simulator()
    model = create_model(config.model, network.access, network.latency, sim.queue,
                         check_invariants=config.check_invariants)
    transport = Transport(sim, model, setup_delay=config.setup_delay)
    deliveries: List[DeliveryRecord] = []
    for host in network.latency.hosts:
        transport.listen(host, DATA_PORT, deliveries.append)
    for index, spec in enumerate(flows):
        sim.schedule(spec.start, FlowStart(Message(spec.size, spec.src, spec.dst, DATA_PORT, tag=index)))

    summary = transport.run()
    runtime = time.perf_counter() - started
    if len(deliveries) != len(flows):
        raise HarnessError(f"{len(flows)} flows sent but {len(deliveries)} delivered")

    records = sorted((FlowRecord.from_delivery(d) for d in deliveries), key=lambda r: r.flow_id)
    counters = model.counters()
    stats = replace(
        aggregate(records),
        events_dispatched=summary.events,
        queue_high_water_mark=summary.high_water_mark,
        rate_recomputations=counters["rate_recomputations"],
        stale_events=counters["stale_events"],
        settle_clamps=counters["settle_clamps"],
        peak_active_flows=counters["peak_active_flows"],
        wall_clock_runtime_s=runtime,
        peak_rss_kb=peak_rss_kb(),
    )
    return RunResult(records, stats, summary, counters)


def write_run(result: RunResult, output_dir: str) -> Tuple[str, str]:
    results = ResultManager(output_dir)
    csv_path = results.save_csv([r.csv_row() for r in result.records], "flows.csv", CSV_HEADER)
    json_path = results.save_json(result.stats.to_dict(), "stats.json")
    return csv_path, json_path


@dataclass(frozen=True)
class GenTopologyResult:
    path: str
    topology: Topology
    validation: ValidationReport
    stats: Optional[TopologyStats]

    def lines(self) -> List[str]:
        hosts = len(self.topology.end_hosts())
        lines = [
            f"topology written to {self.path}",
            f"nodes: {len(self.topology.nodes)} (end hosts: {hosts})",
            f"links: {len(self.topology.links)}",
        ]
        if self.stats is not None:
            lines.append(f"avg RTT: {self.stats.avg_rtt * 1000:.3f} ms")
            lines.append(f"max RTT: {self.stats.max_rtt * 1000:.3f} ms")
        verdict = "passed" if self.validation.passed else f"FAILED ({len(self.validation.violations)} links)"
        lines.append(f"no-core-bottleneck validation: {verdict}")
        return lines


def cmd_gen_topology(params: TSParams, output: str) -> GenTopologyResult:
    """Generates a transit-stub topology, writes it and reports its shape"""
    topology = generate_transit_stub(params)
    path = str(save_topology(topology, output))
    report = validate_no_core_bottleneck(topology)
    stats = topology_stats(build_latency_table(topology)) if len(topology.end_hosts()) >= 2 else None
    get_logger().info("Generated topology", path=path, nodes=len(topology.nodes),
                      links=len(topology.links), seed=params.seed, validation=report.passed)
    return GenTopologyResult(path, topology, report, stats)


def cmd_run(config: ScenarioConfig, output_dir: str, network: Optional[Network] = None) -> RunResult:
    """Runs one scenario and writes flows.csv and stats.json"""
    network = network or build_network(config)
    flows = random_workload(config, network.latency.hosts, config.seed)
    get_logger().info("Run started", model=config.model.value, flows=len(flows),
                      size=config.flow_size, seed=config.seed)
    result = simulate(config, network, flows)
    write_run(result, output_dir)
    get_logger().info("Run finished", events=result.summary.events, clock=result.summary.clock,
                      high_water_mark=result.summary.high_water_mark,
                      runtime=f"{result.stats.wall_clock_runtime_s:.3f}s")
    return result


def sweep_seeds(sizes: Sequence[int], seed: int) -> List[int]:
    """seed + index of the size's first occurrence, so repeated sizes share a workload"""
    return [seed + list(sizes).index(size) for size in sizes]


def _sweep_point(args: Tuple[ScenarioConfig, Network, str]) -> RunResult:
    config, network, output_dir = args
    return cmd_run(config, output_dir, network)


def cmd_sweep(config: ScenarioConfig, output_dir: str, sizes: Optional[Sequence[int]] = None) -> List[Dict[str, Any]]:
    """
    Runs the scenario once per flow size and tabulates the results

    Per-size outputs go to size_<bytes>/; sweep.csv and sweep.json hold
    one row per size in input order.
    """
    sizes = list(sizes or config.flow_sizes)
    if len(sizes) < 2:
        raise ConfigError(f"A sweep needs at least two flow sizes, got {len(sizes)}")
    network = build_network(config)
    jobs = [
        (config.for_size(size, seed), network, os.path.join(output_dir, f"size_{size}"))
        for size, seed in zip(sizes, sweep_seeds(sizes, config.seed))
    ]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(job) for job in jobs]

    rows = []
    for (point, _, _), result in zip(jobs, results):
        stats = result.stats
        rows.append({
            "size_bytes": point.flow_size,
            "seed": point.seed,
            "flow_count": stats.flow_count,
            "mean_duration_s": stats.mean_duration_s,
            "median_duration_s": stats.median_duration_s,
            "p95_duration_s": stats.p95_duration_s,
            "max_duration_s": stats.max_duration_s,
            "wall_clock_runtime_s": stats.wall_clock_runtime_s,
            "events_dispatched": stats.events_dispatched,
        })
    results_dir = ResultManager(output_dir)
    results_dir.save_csv([[row[k] for k in SWEEP_HEADER] for row in rows], "sweep.csv", SWEEP_HEADER)
    results_dir.save_json(rows, "sweep.json")
    get_logger().info("Sweep finished", sizes=len(sizes), output=output_dir)
    return rows


def cmd_scale(config: ScenarioConfig, output_dir: str,
              counts: Sequence[int] = DEFAULT_SCALE_COUNTS) -> List[Dict[str, Any]]:
    """Fixed flow size, growing flow count: runtime, events, queue size and memory per count"""
    network = build_network(config)
    rows = []
    for count in counts:
        point = replace(config, flow_count=int(count))
        result = simulate(point, network, random_workload(point, network.latency.hosts, point.seed))
        rows.append({
            "flow_count": int(count),
            "flow_size": point.flow_size,
            "wall_clock_runtime_s": result.stats.wall_clock_runtime_s,
            "events_dispatched": result.stats.events_dispatched,
            "queue_high_water_mark": result.stats.queue_high_water_mark,
            "peak_active_flows": result.stats.peak_active_flows,
            "peak_rss_kb": result.stats.peak_rss_kb,
        })
        get_logger().info("Scale point done", flows=count, runtime=f"{result.stats.wall_clock_runtime_s:.3f}s")
    results_dir = ResultManager(output_dir)
    results_dir.save_csv([[row[k] for k in SCALE_HEADER] for row in rows], "scale.csv", SCALE_HEADER)
    results_dir.save_json(rows, "scale.json")
    return rows

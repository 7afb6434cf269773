"""
Flow Model Library for the Narses flow-level network simulator
Flow lifecycle, minimum-share bandwidth allocation with reallocation
locality, the naive contention-free model and two verification oracles
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from operator import attrgetter
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set, Type

import numpy as np

from libraries.SimCoreLibrary import (
    EventQueue,
    FlowCompletion,
    FlowDelivery,
    FlowStart,
    NarsesError,
    RunSummary,
    Simulator,
)
from libraries.TopologyLibrary import LatencyTable, UnknownNode

BITS_PER_BYTE = 8.0
# Overshoot (relative to flow size) below which a negative residual is float noise, not a missed completion
SETTLE_TOLERANCE = 1e-9
BYTE_ACCOUNTING_TOLERANCE = 1e-6
CAPACITY_TOLERANCE = 1e-9

_by_flow_id = attrgetter("flow_id")


# Custom exceptions for flow model operations
class FlowModelError(NarsesError):
    """Base exception for flow model operations"""


class UnknownHost(FlowModelError):
    """Raised when a flow endpoint is not an end host of the model"""


class UnknownFlow(FlowModelError):
    """Raised when an event names a flow the model never created"""


class ZeroSize(FlowModelError):
    """Raised when a flow of zero or negative size is requested"""


class SelfFlow(FlowModelError):
    """Raised when a flow's source and destination coincide"""


class TimeRegression(FlowModelError):
    """Raised when a flow is settled at a time before its last settlement"""


class ModelInvariantError(FlowModelError):
    """Raised when invariant checking is on and an allocation invariant fails"""


class FlowState(Enum):
    TRANSMITTING = "transmitting"
    PROPAGATING = "propagating"
    DELIVERED = "delivered"


class ModelKind(Enum):
    NAIVE = "naive"
    BANDWIDTH_SHARE = "bandwidth_share"


class Flow:
    """One in-flight transfer; remaining is in bytes, rate in bits/s"""

    __slots__ = ("flow_id", "src", "dst", "size", "remaining", "rate", "last_settle",
                 "version", "state", "tag", "dst_port", "opened_at", "tx_end")

    def __init__(self, flow_id: int, src: int, dst: int, size: int, now: float,
                 tag: Any = None, dst_port: int = 0, opened_at: Optional[float] = None):
        self.flow_id = flow_id
        self.src = src
        self.dst = dst
        self.size = size
        self.remaining = float(size)
        self.rate = 0.0
        self.last_settle = now
        self.version = 0
        self.state = FlowState.TRANSMITTING
        self.tag = tag
        self.dst_port = dst_port
        self.opened_at = now if opened_at is None else opened_at
        self.tx_end: Optional[float] = None

    def __repr__(self) -> str:
        return (f"Flow(id={self.flow_id}, {self.src}->{self.dst}, size={self.size}, "
                f"remaining={self.remaining:.3f}, rate={self.rate}, v={self.version}, {self.state.value})")


@dataclass(frozen=True)
class DeliveryRecord:
    """A flow fully received; delivered - start is the simulated completion time"""
    flow_id: int
    tag: Any
    size: int
    start: float
    delivered: float
    src: int = -1
    dst: int = -1
    dst_port: int = 0

    @property
    def duration(self) -> float:
        return self.delivered - self.start


class NodeLoad:
    """Per end host, the transmitting flows it sends or receives"""

    def __init__(self, hosts: Iterable[int]):
        self._incident: Dict[int, Dict[int, Flow]] = {host: {} for host in hosts}

    def __contains__(self, host: int) -> bool:
        return host in self._incident

    def count(self, host: int) -> int:
        try:
            return len(self._incident[host])
        except KeyError:
            raise UnknownHost(f"Host {host} is not an end host of this model") from None

    def flows(self, host: int) -> Iterable[Flow]:
        return self._incident[host].values()

    def attach(self, flow: Flow) -> None:
        self._incident[flow.src][flow.flow_id] = flow
        self._incident[flow.dst][flow.flow_id] = flow

    def detach(self, flow: Flow) -> None:
        del self._incident[flow.src][flow.flow_id]
        del self._incident[flow.dst][flow.flow_id]

    def as_counts(self) -> Dict[int, int]:
        return {host: len(flows) for host, flows in self._incident.items()}


def min_share_rate(flow: Flow, loads: NodeLoad, access: Mapping[int, float]) -> float:
    """
    Minimum-share allocation for one flow

    Args:
        flow: A transmitting flow
        loads: Active incident flow counts per host
        access: Access bandwidth per end host, bits/s

    Returns:
        min(bw(src)/count(src), bw(dst)/count(dst)) in bits/s
    """
    try:
        src_share = access[flow.src] / loads.count(flow.src)
        dst_share = access[flow.dst] / loads.count(flow.dst)
    except KeyError as err:
        raise UnknownHost(f"Host {err.args[0]} has no access bandwidth") from None
    return src_share if src_share < dst_share else dst_share


def settle(flow: Flow, now: float) -> bool:
    """
    Drains a flow's remaining bytes up to now at its current rate

    Returns:
        True when the drain overshot zero beyond float noise, i.e. the
        flow's completion was missed
    """
    elapsed = now - flow.last_settle
    if elapsed < 0:
        raise TimeRegression(f"Flow {flow.flow_id} settled at {now}, last settled at {flow.last_settle}")
    remaining = flow.remaining - flow.rate * elapsed / BITS_PER_BYTE
    clamped = False
    if remaining < 0.0:
        clamped = remaining < -SETTLE_TOLERANCE * flow.size
        remaining = 0.0
    flow.remaining = remaining
    flow.last_settle = now
    return clamped


def naive_duration(src: int, dst: int, size: int, latency: LatencyTable,
                   access: Mapping[int, float]) -> float:
    """Contention-free transfer time: latency + 8*size / min(bw(src), bw(dst))"""
    if size <= 0:
        raise ZeroSize(f"Flow size must be > 0 bytes, got {size}")
    try:
        bottleneck = min(access[src], access[dst])
        one_way = latency.latency(src, dst)
    except (KeyError, UnknownNode) as err:
        raise UnknownHost(f"Unknown end host in {src}->{dst}") from err
    return one_way + BITS_PER_BYTE * size / bottleneck


class NetworkModel:
    """
    Common flow bookkeeping for the interchangeable network models

    Models schedule their own FlowCompletion / FlowDelivery events on the
    queue they were given and hand back DeliveryRecords when flows arrive.
    """

    kind: ModelKind

    def __init__(self, access: Mapping[int, float], latency: LatencyTable, queue: EventQueue,
                 check_invariants: bool = False):
        self.access: Dict[int, float] = dict(access)
        self.latency = latency
        self.queue = queue
        self.check_invariants = check_invariants
        self.flows: Dict[int, Flow] = {}
        self._next_id = 0
        self._reserved: Set[int] = set()
        self.flows_started = 0
        self.flows_delivered = 0
        self.rate_recomputations = 0
        self.stale_events = 0
        self.settle_clamps = 0
        self.peak_active_flows = 0

    def _take_id(self) -> int:
        flow_id = self._next_id
        self._next_id += 1
        return flow_id

    def reserve_id(self) -> int:
        """Allocates a flow id ahead of the flow's start"""
        flow_id = self._take_id()
        self._reserved.add(flow_id)
        return flow_id

    def validate_request(self, src: int, dst: int, size: int) -> None:
        for host in (src, dst):
            if host not in self.access or host not in self.latency:
                raise UnknownHost(f"Host {host} is not an end host of this model")
        if src == dst:
            raise SelfFlow(f"Flow source and destination are both host {src}")
        if size <= 0:
            raise ZeroSize(f"Flow size must be > 0 bytes, got {size}")

    def _new_flow(self, src: int, dst: int, size: int, now: float, flow_id: Optional[int],
                  tag: Any, dst_port: int, opened_at: Optional[float]) -> Flow:
        if flow_id is None:
            flow_id = self._take_id()
        elif flow_id in self.flows:
            raise FlowModelError(f"Flow id {flow_id} is already in use")
        self._reserved.discard(flow_id)
        flow = Flow(flow_id, src, dst, int(size), now, tag=tag, dst_port=dst_port, opened_at=opened_at)
        self.flows[flow_id] = flow
        self.flows_started += 1
        return flow

    def _deliver(self, flow: Flow, now: float) -> DeliveryRecord:
        flow.state = FlowState.DELIVERED
        del self.flows[flow.flow_id]
        self.flows_delivered += 1
        return DeliveryRecord(flow.flow_id, flow.tag, flow.size, flow.opened_at, now,
                              flow.src, flow.dst, flow.dst_port)

    def start_flow(self, src: int, dst: int, size: int, now: float, *, flow_id: Optional[int] = None,
                   tag: Any = None, dst_port: int = 0, opened_at: Optional[float] = None) -> int:
        raise NotImplementedError

    def on_completion(self, flow_id: int, version: int, now: float) -> Optional[DeliveryRecord]:
        raise NotImplementedError

    def on_delivery(self, flow_id: int, now: float) -> DeliveryRecord:
        flow = self.flows.get(flow_id)
        if flow is None or flow.state is not FlowState.PROPAGATING:
            raise UnknownFlow(f"Delivery for flow {flow_id}, which is not propagating")
        return self._deliver(flow, now)

    def counters(self) -> Dict[str, int]:
        return {
            "flows_started": self.flows_started,
            "flows_delivered": self.flows_delivered,
            "rate_recomputations": self.rate_recomputations,
            "stale_events": self.stale_events,
            "settle_clamps": self.settle_clamps,
            "peak_active_flows": self.peak_active_flows,
        }


class NaiveModel(NetworkModel):
    """Ignores cross-traffic: every flow runs at min(bw(src), bw(dst))"""

    kind = ModelKind.NAIVE

    def start_flow(self, src: int, dst: int, size: int, now: float, *, flow_id: Optional[int] = None,
                   tag: Any = None, dst_port: int = 0, opened_at: Optional[float] = None) -> int:
        self.validate_request(src, dst, size)
        flow = self._new_flow(src, dst, size, now, flow_id, tag, dst_port, opened_at)
        flow.rate = min(self.access[src], self.access[dst])
        self.peak_active_flows = max(self.peak_active_flows, len(self.flows))
        duration = naive_duration(src, dst, flow.size, self.latency, self.access)
        self.queue.schedule(now + duration, FlowCompletion(flow.flow_id, flow.version))
        return flow.flow_id

    def on_completion(self, flow_id: int, version: int, now: float) -> Optional[DeliveryRecord]:
        flow = self.flows.get(flow_id)
        if flow is None:
            raise UnknownFlow(f"Completion for unknown flow {flow_id}")
        flow.remaining = 0.0
        flow.tx_end = now
        return self._deliver(flow, now)


class BandwidthShareModel(NetworkModel):
    """
    Minimum-share allocation over end-host access links

    A start or completion at hosts {X, Y} recomputes only flows incident to
    X or Y. A flow is settled right before its rate changes and its previous
    completion event is left in the queue, to be discarded by the version
    guard when it pops.
    """

    kind = ModelKind.BANDWIDTH_SHARE

    def __init__(self, access: Mapping[int, float], latency: LatencyTable, queue: EventQueue,
                 check_invariants: bool = False):
        super().__init__(access, latency, queue, check_invariants)
        self.loads = NodeLoad(self.access)
        self.active: Dict[int, Flow] = {}

    def start_flow(self, src: int, dst: int, size: int, now: float, *, flow_id: Optional[int] = None,
                   tag: Any = None, dst_port: int = 0, opened_at: Optional[float] = None) -> int:
        self.validate_request(src, dst, size)
        flow = self._new_flow(src, dst, size, now, flow_id, tag, dst_port, opened_at)
        self.loads.attach(flow)
        self.active[flow.flow_id] = flow
        if len(self.active) > self.peak_active_flows:
            self.peak_active_flows = len(self.active)
        self._reallocate(self._affected(src, dst), now, completing=False)
        if self.check_invariants:
            self.verify()
        return flow.flow_id

    def on_completion(self, flow_id: int, version: int, now: float) -> Optional[DeliveryRecord]:
        flow = self.flows.get(flow_id)
        if flow is None:
            if flow_id < self._next_id and flow_id not in self._reserved:
                # delivered and forgotten; an older completion event for it
                self.stale_events += 1
                return None
            raise UnknownFlow(f"Completion for unknown flow {flow_id}")
        if flow.state is not FlowState.TRANSMITTING or version != flow.version:
            self.stale_events += 1
            return None

        residual = flow.remaining - flow.rate * (now - flow.last_settle) / BITS_PER_BYTE
        if settle(flow, now):
            self.settle_clamps += 1
        if self.check_invariants and abs(residual) > BYTE_ACCOUNTING_TOLERANCE * flow.size:
            raise ModelInvariantError(
                f"Flow {flow_id} delivered {flow.size - residual} of {flow.size} bytes"
            )
        flow.remaining = 0.0
        flow.state = FlowState.PROPAGATING
        flow.tx_end = now
        self.loads.detach(flow)
        del self.active[flow_id]
        self._reallocate(self._affected(flow.src, flow.dst), now, completing=True)
        if self.check_invariants:
            self.verify()

        delivered_at = now + self.latency.latency(flow.src, flow.dst)
        if delivered_at == now:
            return self._deliver(flow, now)
        self.queue.schedule(delivered_at, FlowDelivery(flow_id))
        return None

    def _affected(self, src: int, dst: int) -> List[Flow]:
        """Transmitting flows incident to src or dst, each once"""
        flows = list(self.loads.flows(src))
        for flow in self.loads.flows(dst):
            if flow.src != src and flow.dst != src:
                flows.append(flow)
        return flows

    def _reallocate(self, flows: List[Flow], now: float, completing: bool) -> None:
        loads = self.loads
        access = self.access
        schedule = self.queue.schedule
        # ascending flow id, the same order for any affected set
        for flow in sorted(flows, key=_by_flow_id):
            rate = min_share_rate(flow, loads, access)
            self.rate_recomputations += 1
            if rate == flow.rate:
                continue
            if completing and self.check_invariants and rate < flow.rate:
                raise ModelInvariantError(
                    f"Flow {flow.flow_id} slowed from {flow.rate} to {rate} on a completion"
                )
            if settle(flow, now):
                self.settle_clamps += 1
            flow.rate = rate
            flow.version += 1
            schedule(now + BITS_PER_BYTE * flow.remaining / rate, FlowCompletion(flow.flow_id, flow.version))

    def verify(self) -> None:
        """
        Checks the allocation invariants over every transmitting flow and host

        Raises:
            ModelInvariantError: rate formula, positivity, byte bounds, load
            counts or access capacity violated
        """
        actual = {host: 0 for host in self.access}
        used = {host: 0.0 for host in self.access}
        for flow in self.active.values():
            expected = min_share_rate(flow, self.loads, self.access)
            if flow.rate != expected:
                raise ModelInvariantError(f"Flow {flow.flow_id} runs at {flow.rate}, formula gives {expected}")
            if not flow.rate > 0:
                raise ModelInvariantError(f"Transmitting flow {flow.flow_id} has rate {flow.rate}")
            if not 0.0 <= flow.remaining <= flow.size:
                raise ModelInvariantError(f"Flow {flow.flow_id} has {flow.remaining} of {flow.size} bytes left")
            for host in (flow.src, flow.dst):
                actual[host] += 1
                used[host] += flow.rate
        counts = self.loads.as_counts()
        for host, bandwidth in self.access.items():
            if counts[host] != actual[host]:
                raise ModelInvariantError(f"Host {host} load is {counts[host]}, {actual[host]} flows attached")
            if used[host] > bandwidth * (1.0 + CAPACITY_TOLERANCE):
                raise ModelInvariantError(f"Host {host} allocates {used[host]} of {bandwidth} bits/s")


class GlobalRecomputeModel(BandwidthShareModel):
    """Verification variant: every start or completion recomputes all transmitting flows"""

    def _affected(self, src: int, dst: int) -> List[Flow]:
        return list(self.active.values())


MODEL_CLASSES: Dict[ModelKind, Type[NetworkModel]] = {
    ModelKind.NAIVE: NaiveModel,
    ModelKind.BANDWIDTH_SHARE: BandwidthShareModel,
}


def create_model(kind: ModelKind, access: Mapping[int, float], latency: LatencyTable,
                 queue: EventQueue, check_invariants: bool = False) -> NetworkModel:
    return MODEL_CLASSES[kind](access, latency, queue, check_invariants=check_invariants)


@dataclass(frozen=True)
class FlowSpec:
    start: float
    src: int
    dst: int
    size: int


@dataclass
class Scenario:
    """Hosts, their latencies and a flow list, runnable without a transport"""
    access: Dict[int, float]
    latency: LatencyTable
    flows: List[FlowSpec] = field(default_factory=list)


@dataclass
class ScenarioResult:
    completions: Dict[int, float]
    summary: RunSummary
    model: NetworkModel


def run_scenario(scenario: Scenario, model_class: Type[NetworkModel] = BandwidthShareModel,
                 check_invariants: bool = False) -> ScenarioResult:
    """
    Drives a model directly from the event engine

    Returns:
        ScenarioResult whose completions map the index of each FlowSpec to
        its delivery time
    """
    sim = Simulator()
    model = model_class(scenario.access, scenario.latency, sim.queue, check_invariants=check_invariants)
    completions: Dict[int, float] = {}

    for index, spec in enumerate(scenario.flows):
        sim.schedule(spec.start, FlowStart((index, spec)))

    def on_start(payload: FlowStart, now: float) -> None:
        index, spec = payload.message
        model.start_flow(spec.src, spec.dst, spec.size, now, tag=index)

    def record(delivery: Optional[DeliveryRecord]) -> None:
        if delivery is not None:
            completions[delivery.tag] = delivery.delivered

    summary = sim.run({
        FlowStart: on_start,
        FlowCompletion: lambda p, now: record(model.on_completion(p.flow_id, p.version, now)),
        FlowDelivery: lambda p, now: record(model.on_delivery(p.flow_id, now)),
    })
    return ScenarioResult(completions, summary, model)


def global_recompute_oracle(scenario: Scenario) -> Dict[int, float]:
    """Completion times with every event reallocating every flow"""
    return run_scenario(scenario, GlobalRecomputeModel).completions


def fluid_timestep_oracle(scenario: Scenario, dt: float) -> Dict[int, float]:
    """
    Fixed-step fluid integration of the minimum-share semantics

    Each step recomputes every rate from the flows active at the step's
    start and drains rate*dt bits. A flow joins at the first step boundary
    at or after its start time and completes in the step where its
    remaining bits reach zero, reported at that step's end plus latency.

    Args:
        scenario: Hosts, latencies and flows
        dt: Step length in seconds

    Returns:
        Mapping FlowSpec index -> completion time
    """
    if not dt > 0 or not math.isfinite(dt):
        raise FlowModelError(f"Time step must be > 0, got {dt}")
    specs = scenario.flows
    if not specs:
        return {}
    hosts = sorted(scenario.access)
    index = {host: i for i, host in enumerate(hosts)}
    bandwidth = np.array([scenario.access[h] for h in hosts], dtype=float)
    src = np.array([index[s.src] for s in specs], dtype=np.intp)
    dst = np.array([index[s.dst] for s in specs], dtype=np.intp)
    starts = np.array([s.start for s in specs], dtype=float)
    remaining = np.array([BITS_PER_BYTE * s.size for s in specs], dtype=float)
    tolerance = remaining * SETTLE_TOLERANCE
    latency = np.array([scenario.latency.latency(s.src, s.dst) for s in specs], dtype=float)
    completion = np.full(len(specs), np.nan)
    done = np.zeros(len(specs), dtype=bool)
    join_slack = dt * 1e-6

    step = 0
    while not done.all():
        active = ~done & (starts <= step * dt + join_slack)
        if not active.any():
            next_start = starts[~done].min()
            step = max(step + 1, math.ceil((next_start - join_slack) / dt))
            continue
        a_src, a_dst = src[active], dst[active]
        counts = np.bincount(a_src, minlength=len(hosts)) + np.bincount(a_dst, minlength=len(hosts))
        rate = np.minimum(bandwidth[a_src] / counts[a_src], bandwidth[a_dst] / counts[a_dst])
        remaining[active] -= rate * dt
        finished = np.zeros_like(done)
        finished[active] = remaining[active] <= tolerance[active]
        completion[finished] = (step + 1) * dt + latency[finished]
        done |= finished
        step += 1
    return {i: float(t) for i, t in enumerate(completion)}

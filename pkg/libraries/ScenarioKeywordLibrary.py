"""
Scenario keywords for the Narses flow-level network simulator
Builds small named-host scenarios on the bandwidth-share model and checks
rates, versions and completion times from Robot Framework suites
"""
import math
from typing import Dict, Optional

try:
    from robot.api.deco import keyword
    from robot.libraries.BuiltIn import BuiltIn
    ROBOT_AVAILABLE = True
except ImportError:
    ROBOT_AVAILABLE = False
    def keyword(name=None):
        """Fallback keyword decorator when robot framework is not available."""
        if callable(name):
            return name
        return lambda func: func

from libraries.FlowModelLibrary import BandwidthShareModel, DeliveryRecord
from libraries.SimCoreLibrary import FlowCompletion, FlowDelivery, FlowStart, Simulator
from libraries.TopologyLibrary import LatencyTable

MBPS = 1e6


class ScenarioKeywordLibrary:
    """
    Keyword facade over a zero-latency bandwidth-share scenario

    Hosts are declared by name with an access bandwidth in Mbps; the model
    is built on the first flow and every event is checked against the
    allocation invariants.
    """

    ROBOT_LIBRARY_SCOPE = 'TEST'
    ROBOT_AUTO_KEYWORDS = False

    def __init__(self):
        self.builtin = BuiltIn() if ROBOT_AVAILABLE else None
        self.hosts: Dict[str, int] = {}
        self.bandwidths: Dict[int, float] = {}
        self.flow_ids: Dict[str, int] = {}
        self.completions: Dict[str, float] = {}
        self.sim: Optional[Simulator] = None
        self.model: Optional[BandwidthShareModel] = None

    def _fail(self, message: str) -> None:
        if self.builtin is not None:
            self.builtin.fail(message)
        raise AssertionError(message)

    def _ensure_model(self) -> BandwidthShareModel:
        if self.model is None:
            hosts = list(self.bandwidths)
            self.sim = Simulator(record_events=True)
            self.model = BandwidthShareModel(self.bandwidths, LatencyTable.uniform(hosts, 0.0),
                                             self.sim.queue, check_invariants=True)
        return self.model

    def _flow(self, name: str):
        if name not in self.flow_ids:
            self._fail(f"Flow {name} has not started")
        flow = self.model.flows.get(self.flow_ids[name])
        if flow is None:
            self._fail(f"Flow {name} is no longer in the network")
        return flow

    def _on_start(self, payload: FlowStart, now: float) -> None:
        name, src, dst, size = payload.message
        self.flow_ids[name] = self.model.start_flow(src, dst, size, now, tag=name)

    def _record(self, delivery: Optional[DeliveryRecord]) -> None:
        if delivery is not None:
            self.completions[delivery.tag] = delivery.delivered

    def _dispatcher(self):
        return {
            FlowStart: self._on_start,
            FlowCompletion: lambda p, now: self._record(self.model.on_completion(p.flow_id, p.version, now)),
            FlowDelivery: lambda p, now: self._record(self.model.on_delivery(p.flow_id, now)),
        }

    @keyword("Add Host")
    def add_host(self, name: str, bandwidth_mbps) -> int:
        """
        Declares an end host

        Args:
            name: Host label used by other keywords
            bandwidth_mbps: Access link bandwidth in Mbps

        Returns:
            The host id
        """
        if self.model is not None:
            self._fail("Hosts must be added before the first flow")
        if name in self.hosts:
            self._fail(f"Host {name} already exists")
        host = len(self.hosts)
        self.hosts[name] = host
        self.bandwidths[host] = float(bandwidth_mbps) * MBPS
        return host

    @keyword("Add Flow")
    def add_flow(self, name: str, src: str, dst: str, size_bytes, start=0.0) -> None:
        """Schedules a flow from src to dst at start seconds"""
        self._ensure_model()
        for host in (src, dst):
            if host not in self.hosts:
                self._fail(f"Unknown host {host}")
        self.sim.schedule(float(start), FlowStart((name, self.hosts[src], self.hosts[dst], int(size_bytes))))

    @keyword("Run Simulation Until")
    def run_simulation_until(self, seconds) -> None:
        self._ensure_model()
        self.sim.run(self._dispatcher(), until=float(seconds))

    @keyword("Run Simulation")
    def run_simulation(self) -> int:
        """Runs to an empty queue and returns the number of dispatched events"""
        self._ensure_model()
        return self.sim.run(self._dispatcher()).events

    @keyword("Flow Rate Should Be")
    def flow_rate_should_be(self, name: str, rate_mbps) -> None:
        expected = float(rate_mbps) * MBPS
        actual = self._flow(name).rate
        if actual != expected:
            self._fail(f"Flow {name} runs at {actual / MBPS} Mbps, expected {rate_mbps}")

    @keyword("Get Flow Rate")
    def get_flow_rate(self, name: str) -> float:
        return self._flow(name).rate

    @keyword("Get Flow Version")
    def get_flow_version(self, name: str) -> int:
        return self._flow(name).version

    @keyword("Flow Should Complete At")
    def flow_should_complete_at(self, name: str, seconds) -> None:
        if name not in self.completions:
            self._fail(f"Flow {name} has not completed")
        if not math.isclose(self.completions[name], float(seconds), rel_tol=1e-9, abs_tol=1e-12):
            self._fail(f"Flow {name} completed at {self.completions[name]}, expected {seconds}")

    @keyword("Events Dispatched Should Be")
    def events_dispatched_should_be(self, count) -> None:
        if self.sim is None or self.sim.events_dispatched != int(count):
            actual = 0 if self.sim is None else self.sim.events_dispatched
            self._fail(f"{actual} events dispatched, expected {count}")

    @keyword("Stale Events Should Be")
    def stale_events_should_be(self, count) -> None:
        actual = self._ensure_model().stale_events
        if actual != int(count):
            self._fail(f"{actual} stale completions discarded, expected {count}")

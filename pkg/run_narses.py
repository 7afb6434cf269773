#!/usr/bin/env python3
"""
Command-line front end for the Narses flow-level network simulator
Generates topologies, runs scenarios, sweeps flow sizes and scales flow counts
"""
import argparse
import sys
from dataclasses import replace
from typing import List, Optional

from libraries.HarnessLibrary import (
    DEFAULT_SCALE_COUNTS,
    ScenarioConfig,
    ValidationFailed,
    cmd_gen_topology,
    cmd_run,
    cmd_scale,
    cmd_sweep,
    get_logger,
    load_scenario_config,
)
from libraries.SimCoreLibrary import NarsesError
from libraries.TopologyLibrary import InvariantViolation, TSParams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2


class NarsesArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_USAGE instead of argparse's 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


class NarsesRunner:
    """Executes one CLI command and returns its exit code"""

    def __init__(self, out=None):
        self.out = out or sys.stdout
        self.logger = get_logger()

    def _print(self, line: str) -> None:
        print(line, file=self.out)

    def gen_topology(self, args) -> int:
        params = load_scenario_config(args.config).params if args.config else TSParams()
        overrides = {
            "transit_domains": args.transit,
            "transit_nodes_per_domain": args.transit_nodes,
            "stub_domains_per_transit_node": args.stubs,
            "stub_routers_per_stub": args.stub_routers,
            "hosts_per_stub_router": args.hosts,
            "chord_probability": args.chord_probability,
            "seed": args.seed,
        }
        params = replace(params, **{k: v for k, v in overrides.items() if v is not None})
        result = cmd_gen_topology(params, args.output)
        for line in result.lines():
            self._print(line)
        return EXIT_OK if result.validation.passed else EXIT_VALIDATION

    def run(self, args) -> int:
        config = load_scenario_config(args.config)
        result = cmd_run(config, args.output_dir)
        stats = result.stats
        self._print(f"flows: {stats.flow_count}")
        self._print(f"mean duration: {stats.mean_duration_s:.6f} s")
        self._print(f"p95 duration: {stats.p95_duration_s:.6f} s")
        self._print(f"events: {stats.events_dispatched}")
        self._print(f"runtime: {stats.wall_clock_runtime_s:.3f} s")
        self._print(f"output: {args.output_dir}")
        return EXIT_OK

    def sweep(self, args) -> int:
        config = load_scenario_config(args.config)
        rows = cmd_sweep(config, args.output_dir, sizes=args.sizes)
        self._print(f"{'size_bytes':>12} {'mean_s':>12} {'runtime_s':>10}")
        for row in rows:
            self._print(f"{row['size_bytes']:>12} {row['mean_duration_s']:>12.6f} {row['wall_clock_runtime_s']:>10.3f}")
        return EXIT_OK

    def scale(self, args) -> int:
        config: ScenarioConfig = load_scenario_config(args.config)
        if args.size is not None:
            config = replace(config, flow_sizes=(args.size,))
        rows = cmd_scale(config, args.output_dir, counts=args.counts)
        self._print(f"{'flows':>8} {'runtime_s':>10} {'events':>10} {'queue_hwm':>10} {'peak_rss_kb':>12}")
        for row in rows:
            rss = "-" if row["peak_rss_kb"] is None else row["peak_rss_kb"]
            self._print(f"{row['flow_count']:>8} {row['wall_clock_runtime_s']:>10.3f} "
                        f"{row['events_dispatched']:>10} {row['queue_high_water_mark']:>10} {rss:>12}")
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = NarsesArgumentParser(prog="run_narses", description="Narses flow-level network simulator")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    gen = commands.add_parser("gen-topology", help="Generate a transit-stub topology file")
    gen.add_argument("--config", help="Take generator parameters from a scenario config")
    gen.add_argument("--transit", type=int, help="Transit domains")
    gen.add_argument("--transit-nodes", type=int, help="Routers per transit domain")
    gen.add_argument("--stubs", type=int, help="Stub domains per transit router")
    gen.add_argument("--stub-routers", type=int, help="Routers per stub domain")
    gen.add_argument("--hosts", type=int, help="End hosts per stub router")
    gen.add_argument("--chord-probability", type=float, help="Extra intra-domain link probability")
    gen.add_argument("--seed", type=int, help="Generator seed")
    gen.add_argument("-o", "--output", required=True, help="Topology file to write")

    run = commands.add_parser("run", help="Run one scenario")
    run.add_argument("--config", required=True, help="Scenario config (.cfg, .json or .yaml)")
    run.add_argument("-o", "--output-dir", default="results/run", help="Directory for flows.csv and stats.json")

    sweep = commands.add_parser("sweep", help="Run a scenario once per flow size")
    sweep.add_argument("--config", required=True, help="Scenario config")
    sweep.add_argument("--sizes", type=int_list, help="Comma-separated flow sizes in bytes")
    sweep.add_argument("-o", "--output-dir", default="results/sweep", help="Directory for sweep outputs")

    scale = commands.add_parser("scale", help="Run a scenario at growing flow counts")
    scale.add_argument("--config", required=True, help="Scenario config")
    scale.add_argument("--counts", type=int_list, default=list(DEFAULT_SCALE_COUNTS),
                       help="Comma-separated flow counts")
    scale.add_argument("--size", type=int, help="Flow size in bytes")
    scale.add_argument("-o", "--output-dir", default="results/scale", help="Directory for scale outputs")
    return parser


def main(argv: Optional[List[str]] = None, out=None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    runner = NarsesRunner(out=out)
    handlers = {
        "gen-topology": runner.gen_topology,
        "run": runner.run,
        "sweep": runner.sweep,
        "scale": runner.scale,
    }
    logger = runner.logger
    try:
        return handlers[args.command](args)
    except (ValidationFailed, InvariantViolation) as err:
        logger.error("Validation failed", command=args.command, error=err)
        print(f"validation failed: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NarsesError, OSError) as err:
        logger.error("Command failed", command=args.command, error=type(err).__name__)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

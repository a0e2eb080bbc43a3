"""Command-line entry point: ``qrsim run | validate | bench``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass

from . import backend
from .config_io import DEFAULT_SEED, ConfigError, ParamSet, parse_params, parse_topology
from .sim_kernel import SimulationError, TraceRecorder
from .simulation import Network
from .tomography_stats import write_results

log = logging.getLogger("qrsim")


@dataclass
class RunConfig:
    command: str
    topology: str | None
    params: str | None
    seed: int | None
    out: str


def _read(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _load_params(path: str | None) -> ParamSet:
    return parse_params(_read(path)) if path else ParamSet()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrsim", description="Quantum repeater network simulator")
    parser.add_argument("--backend", choices=("compiled", "python"),
                        help="error-vector kernel implementation (default: compiled when built)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one topology and write reports")
    run.add_argument("--topology", required=True)
    run.add_argument("--params")
    run.add_argument("--seed", type=int, help=f"overrides the params file (default {DEFAULT_SEED})")
    run.add_argument("--out", default="out")
    run.add_argument("--dump-rulesets", action="store_true", help="print every installed RuleSet")
    run.add_argument("--trace", help="write one line per delivered event to this file")

    val = sub.add_parser("validate", help="two-hop fidelity sweep against the analytic curve")
    val.add_argument("--params", help="base parameters; channel X rate and counts are overridden")
    val.add_argument("--px", type=float, default=0.02)
    val.add_argument("--distances", default="1-10", help="km, as a range a-b or a comma list")
    val.add_argument("--measurements", type=int, default=7000)
    val.add_argument("--repeats", type=int, default=10)
    val.add_argument("--seed", type=int, default=DEFAULT_SEED, help="first seed of the repeats")
    val.add_argument("--out", default="out")

    bench = sub.add_parser("bench", help="linear-chain scaling and backend comparison")
    bench.add_argument("--params")
    bench.add_argument("--repeaters", default="1,3,7")
    bench.add_argument("--qnic-size", type=int, default=100)
    bench.add_argument("--success", type=float, default=0.32)
    bench.add_argument("--pairs", type=int, default=200)
    bench.add_argument("--seed", type=int, default=DEFAULT_SEED)
    bench.add_argument("--out", default="out")
    bench.add_argument("--no-backends", action="store_true", help="skip the backend comparison")
    return parser


def _int_list(text: str) -> list[int]:
    if "-" in text and "," not in text:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def cmd_run(args) -> int:
    topology = parse_topology(_read(args.topology))
    params = _load_params(args.params)
    if args.seed is not None:
        params = params.with_overrides(seed=args.seed)
    trace = TraceRecorder() if args.trace else None
    net = Network(topology, params, trace=trace)
    if args.dump_rulesets:
        original = net.on_installed

        def dump(node, rs):
            print(rs.dump_text(), end="")
            original(node, rs)

        net.on_installed = dump
    stats = net.run()
    runs = net.run_results()
    write_results(runs, args.out, stats.events_processed, stats)
    if trace is not None:
        with open(args.trace, "w") as fh:
            fh.write(trace.text())
    for run in runs:
        print(f"connection {run.connection_id} {run.initiator}->{run.responder}: "
              f"fidelity={run.fidelity:.4f} measurements={run.measurement_count} "
              f"bellpair_per_sec={run.bellpair_per_sec:.1f} completed={run.completed}")
    print(f"events={stats.events_processed} wall={stats.wall_clock_seconds:.2f}s "
          f"events/s={stats.events_per_second:.0f} stopped_by={stats.stopped_by}")
    audit = net.audit()
    if not all(audit.values()):
        log.error("resource audit failed: %s", audit)
        return 1
    return 0 if runs and all(r.completed for r in runs) else 1


def cmd_validate(args) -> int:
    from .experiments import validation_sweep

    base = _load_params(args.params)
    seeds = range(args.seed, args.seed + args.repeats)
    print(f"{'d_km':>5} {'p_clean':>9} {'F_analytic':>10} {'F_mean':>9} {'3SE':>7} {'ok':>3}  per-seed")

    def show(row):
        per_seed = " ".join(f"{f:.4f}" for f in row.fidelities)
        print(f"{row.distance_km:5g} {row.p_clean:9.6f} {row.oracle:10.6f} {row.mean:9.6f} "
              f"{3 * row.pooled_se:7.4f} {'yes' if row.within else 'NO':>3}  {per_seed}", flush=True)

    rows = validation_sweep(args.px, _int_list(args.distances), args.measurements, seeds, base, show)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "validation.csv"), "w") as fh:
        fh.write("distance_km,p_clean,f_analytic,f_mean,se,within\n")
        for r in rows:
            fh.write(f"{r.distance_km!r},{r.p_clean!r},{r.oracle!r},{r.mean!r},{r.pooled_se!r},{int(r.within)}\n")
    return 0 if all(r.within for r in rows) else 1


def cmd_bench(args) -> int:
    from .experiments import backend_benchmark, polynomial_fit, scaling_sweep

    base = _load_params(args.params)
    reps = _int_list(args.repeaters)
    print(f"{'n_R':>4} {'pairs':>6} {'cpu_s':>8} {'cpu/pair':>10} {'events':>9} {'events/pair':>11} {'events/s':>9}")

    def show(r):
        print(f"{r.repeaters:4d} {r.pairs:6d} {r.cpu_seconds:8.3f} {r.cpu_per_pair:10.5f} "
              f"{r.events:9d} {r.events_per_pair:11.1f} {r.events_per_second:9.0f}", flush=True)

    rows = scaling_sweep(reps, args.qnic_size, args.success, args.pairs, args.seed, base, show)
    if len(rows) >= 3:
        for label, ys in (("cpu/pair", [r.cpu_per_pair for r in rows]),
                          ("events/pair", [r.events_per_pair for r in rows])):
            coeffs, r2 = polynomial_fit(reps, ys, 2)
            print(f"quadratic fit of {label}: coeffs={[round(c, 6) for c in coeffs]} R^2={r2:.4f}")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "bench.csv"), "w") as fh:
        fh.write("repeaters,pairs,cpu_s,cpu_per_pair,events,events_per_pair,events_per_sec,completed\n")
        for r in rows:
            fh.write(f"{r.repeaters},{r.pairs},{r.cpu_seconds!r},{r.cpu_per_pair!r},{r.events},"
                     f"{r.events_per_pair!r},{r.events_per_second!r},{int(r.completed)}\n")
    if not args.no_backends:
        print("backend   kernel_s  chain_run_cpu_s")
        for t in backend_benchmark():
            print(f"{t.backend:9s} {t.kernel_seconds:8.3f} {t.simulation_seconds:15.3f}")
    return 0 if all(r.completed for r in rows) else 1


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.backend:
        backend.use(args.backend)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"qrsim: error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, OSError) as exc:
        print(f"qrsim: fatal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

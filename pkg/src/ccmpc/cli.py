"""Command line interface: closed-loop runs, experiment sweeps, trace plots.

Exit codes: 0 success, 1 configuration/usage error, 2 solver failure.
Logging verbosity comes from the CCMPC_LOG environment variable
(debug/info/warning/error; default warning).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from .controller import ControlError, MODE_CC, MODE_DET, MpcConfig
from .network import NetworkConfigError, parse_network_file
from .simulation import (
    ScenarioError,
    UncertaintyModel,
    compute_kpis,
    parse_scenario_file,
    run_closed_loop,
    write_trace_csv,
)
from .sweeps import (
    DEFAULT_BOUND,
    DEFAULT_GAMMA,
    FAMILIES,
    SweepError,
    format_kpi_table,
    run_sweep,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2


def _setup_logging() -> None:
    level_name = os.environ.get("CCMPC_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _out_root(out_flag: str | None) -> Path:
    if out_flag:
        return Path(out_flag)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%SZ")
    return Path("out") / stamp


def _run_name(args) -> str:
    if args.mode == MODE_DET:
        name = "mpc"
    else:
        name = f"cc_g{args.gamma:g}"
    name += f"_p{args.bound:g}"
    if args.scale != 1.0:
        name += f"_a{args.scale:g}"
    if args.offset != 0.0:
        name += f"_b{args.offset:g}"
    return name


def cmd_run(args) -> int:
    spec = parse_network_file(args.network)
    scenario = parse_scenario_file(args.scenario)
    uncertainty = UncertaintyModel(gamma=args.gamma, bound=args.bound,
                                   scale=args.scale, offset=args.offset)
    config = MpcConfig(horizon=args.horizon, mode=args.mode, gamma=args.gamma)

    result = run_closed_loop(spec, config, None, uncertainty, scenario,
                             seed=args.seed)
    report = compute_kpis(result)

    run_dir = _out_root(args.out) / _run_name(args)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_trace_csv(result, run_dir / "trace.csv")
    (run_dir / "kpi.json").write_text(report.to_json() + "\n",
                                      encoding="utf-8")
    (run_dir / "table.txt").write_text(
        format_kpi_table([(_run_name(args), report)], spec, seed=args.seed),
        encoding="utf-8")
    if args.plots:
        from .plots import plot_overview, plot_traces
        from .simulation import read_trace_csv
        meta, cols = read_trace_csv(run_dir / "trace.csv")
        trace = (_run_name(args), meta, cols)
        elements = list(result.tank_ids)
        plot_traces([trace], elements, run_dir / "plots")
        plot_overview(trace, run_dir / "plots")

    print(f"run '{_run_name(args)}' finished: total CSO "
          f"{report.total_m3:.1f} m3, treatment volume {report.wwtp_m3:.1f} m3")
    print(f"artifacts in {run_dir}")
    if result.solver_warnings:
        log.warning("%d of %d steps ended at the solver iteration limit",
                    result.solver_warnings, result.n_steps)
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = parse_network_file(args.network)
    scenario = parse_scenario_file(args.scenario)
    values = None
    if args.values:
        try:
            values = tuple(float(v) for v in args.values.split(","))
        except ValueError:
            raise ScenarioError(f"--values must be a comma list of numbers, "
                                f"got '{args.values}'")
    out_dir = _out_root(args.out) / args.family
    sweep = run_sweep(spec, scenario, args.family, values, seed=args.seed,
                      jobs=args.jobs, horizon=args.horizon, out_dir=out_dir)
    print(f"sweep '{args.family}' finished: {len(sweep.reports)} runs")
    print(f"artifacts in {out_dir}")
    table = out_dir / "table.txt"
    if table.exists():
        print(table.read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plots import available_elements, plot_overview, plot_traces
    from .simulation import read_trace_csv

    traces = []
    for path in args.trace:
        meta, cols = read_trace_csv(path)
        traces.append((Path(path).parent.name or Path(path).stem, meta, cols))

    nets = {t[1].get("network", "?") for t in traces}
    if len(nets) > 1:
        print(f"error: traces come from different networks: {sorted(nets)}",
              file=sys.stderr)
        return EXIT_CONFIG

    valid = available_elements(traces[0][2])
    if args.elements is not None:
        elements = [e for e in args.elements.split(",") if e]
        if not elements:
            print(f"error: empty element filter; valid elements: "
                  f"{sorted(valid)}", file=sys.stderr)
            return EXIT_CONFIG
    else:
        # Default to the tanks with a controllable orifice (recorded in the
        # trace header), falling back to every tank in the trace.
        controlled = traces[0][1].get("controlled", "")
        elements = [e for e in controlled.split(",") if e] or valid
    out_dir = Path(args.out) if args.out else Path("plots")
    try:
        written = plot_traces(traces, elements, out_dir)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if len(traces) == 1:
        written.append(plot_overview(traces[0], out_dir))
    for path in written:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccmpc",
        description="Deterministic and chance-constrained MPC for urban "
                    "drainage networks: closed-loop runs, experiment sweeps "
                    "and trace plots.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--network", required=True,
                       help="network config JSON path")
        p.add_argument("--scenario", required=True,
                       help="scenario JSON path")
        p.add_argument("--horizon", type=int, default=24,
                       help="prediction horizon in steps (default 24)")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for runoff realizations (default 0)")
        p.add_argument("--out", default=None,
                       help="output root (default out/<timestamp>)")

    p_run = sub.add_parser("run", help="one closed-loop simulation")
    add_common(p_run)
    p_run.add_argument("--mode", choices=[MODE_DET, MODE_CC], default=MODE_CC)
    p_run.add_argument("--gamma", type=float, default=DEFAULT_GAMMA,
                       help="confidence level for cc mode (default 0.9)")
    p_run.add_argument("--bound", type=float, default=DEFAULT_BOUND,
                       help="relative uncertainty bound (default 0.5)")
    p_run.add_argument("--scale", type=float, default=1.0,
                       help="forecast scale bias (default 1)")
    p_run.add_argument("--offset", type=float, default=0.0,
                       help="forecast offset bias in m3/s (default 0)")
    p_run.add_argument("--plots", action="store_true",
                       help="also render SVG plots")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run an experiment family")
    add_common(p_sweep)
    p_sweep.add_argument("--family", choices=list(FAMILIES), required=True)
    p_sweep.add_argument("--values", default=None,
                         help="comma list overriding the family's defaults")
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel worker processes (default 1)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render SVG plots from trace files")
    p_plot.add_argument("--trace", action="append", required=True,
                        help="trace.csv path (repeat to overlay runs)")
    p_plot.add_argument("--elements", default=None,
                        help="comma list of element ids (default: all tanks)")
    p_plot.add_argument("--out", default=None,
                        help="plot output directory (default plots/)")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NetworkConfigError, ScenarioError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ControlError, SweepError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

"""Experiment families: batches of closed-loop runs with comparison tables.

Four families mirror the questions the controller is evaluated on:

* ``confidence`` - one deterministic baseline plus one chance-constrained run
  per confidence level;
* ``bound``      - deterministic baseline in a noise-free environment plus
  one chance-constrained run per uncertainty bound;
* ``scale``      - per forecast scale factor, a deterministic and a
  chance-constrained run (both biased the same way);
* ``offset``     - like ``scale`` for additive forecast offsets.

All runs of a sweep share one seed, so every controller variant faces the
identical realization stream and KPI differences isolate the controller.
Workers are independent processes; results only depend on (run spec, seed),
never on scheduling, so any --jobs value reproduces the same artifacts.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .constraints import CostWeights
from .controller import MODE_CC, MODE_DET, MpcConfig
from .network import NetworkSpec, ordered_tanks
from .simulation import (
    KpiReport,
    Scenario,
    SimulationResult,
    UncertaintyModel,
    compute_kpis,
    kpi_deviations,
    run_closed_loop,
    write_trace_csv,
)

log = logging.getLogger(__name__)

FAMILY_CONFIDENCE = "confidence"
FAMILY_BOUND = "bound"
FAMILY_SCALE = "scale"
FAMILY_OFFSET = "offset"
FAMILIES = (FAMILY_CONFIDENCE, FAMILY_BOUND, FAMILY_SCALE, FAMILY_OFFSET)

DEFAULT_VALUES: dict[str, tuple[float, ...]] = {
    FAMILY_CONFIDENCE: (1.0, 0.9, 0.8, 0.7, 0.6),
    FAMILY_BOUND: (0.25, 0.5, 0.75),
    FAMILY_SCALE: (0.8, 0.9, 1.0, 1.1, 1.2),
    FAMILY_OFFSET: (0.0, 0.005, 0.02, 0.1),
}

DEFAULT_GAMMA = 0.9
DEFAULT_BOUND = 0.5


class SweepError(Exception):
    """A sweep run failed; partial results were saved before raising."""


@dataclass(frozen=True)
class RunSpec:
    name: str
    mode: str
    uncertainty: UncertaintyModel


def _fmt(value: float) -> str:
    return f"{value:g}"


def family_runs(family: str,
                values: tuple[float, ...] | None = None) -> tuple[tuple[RunSpec, ...], str]:
    """Run list for a family and the name of its baseline run."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family '{family}', expected one of {FAMILIES}")
    if values is None:
        values = DEFAULT_VALUES[family]
    runs: list[RunSpec] = []
    if family == FAMILY_CONFIDENCE:
        baseline = "mpc"
        runs.append(RunSpec(baseline, MODE_DET,
                            UncertaintyModel(bound=DEFAULT_BOUND)))
        for v in values:
            runs.append(RunSpec(f"cc_g{_fmt(v)}", MODE_CC,
                                UncertaintyModel(gamma=v, bound=DEFAULT_BOUND)))
    elif family == FAMILY_BOUND:
        baseline = "mpc"
        runs.append(RunSpec(baseline, MODE_DET,
                            UncertaintyModel(bound=DEFAULT_BOUND)))
        for v in values:
            runs.append(RunSpec(f"cc_p{_fmt(v)}", MODE_CC,
                                UncertaintyModel(gamma=DEFAULT_GAMMA, bound=v)))
    elif family == FAMILY_SCALE:
        if 1.0 not in values:
            values = (1.0,) + tuple(values)
        baseline = "mpc_a1"
        for v in values:
            unc = UncertaintyModel(gamma=DEFAULT_GAMMA, bound=DEFAULT_BOUND,
                                   scale=v)
            runs.append(RunSpec(f"mpc_a{_fmt(v)}", MODE_DET, unc))
            runs.append(RunSpec(f"cc_a{_fmt(v)}", MODE_CC, unc))
    else:
        if 0.0 not in values:
            values = (0.0,) + tuple(values)
        baseline = "mpc_b0"
        for v in values:
            unc = UncertaintyModel(gamma=DEFAULT_GAMMA, bound=DEFAULT_BOUND,
                                   offset=v)
            runs.append(RunSpec(f"mpc_b{_fmt(v)}", MODE_DET, unc))
            runs.append(RunSpec(f"cc_b{_fmt(v)}", MODE_CC, unc))
    return tuple(runs), baseline


def _execute_run(spec: NetworkSpec, scenario: Scenario, run: RunSpec,
                 horizon: int, seed: int,
                 weights: CostWeights | None) -> SimulationResult:
    config = MpcConfig(horizon=horizon, mode=run.mode,
                       gamma=run.uncertainty.gamma)
    return run_closed_loop(spec, config, weights, run.uncertainty,
                           scenario, seed=seed)


def _worker(args) -> tuple[str, SimulationResult]:
    spec, scenario, run, horizon, seed, weights = args
    return run.name, _execute_run(spec, scenario, run, horizon, seed, weights)


@dataclass
class SweepResult:
    family: str
    baseline_name: str
    runs: tuple[RunSpec, ...]
    reports: dict[str, KpiReport]
    results: dict[str, SimulationResult]
    out_dir: Path | None


def run_sweep(spec: NetworkSpec, scenario: Scenario, family: str,
              values: tuple[float, ...] | None = None, *, seed: int = 0,
              jobs: int = 1, horizon: int = 24,
              weights: CostWeights | None = None,
              out_dir: Path | None = None) -> SweepResult:
    """Run one experiment family; write per-run artifacts and a table.

    The first failing run aborts the sweep: everything finished before it is
    saved, then SweepError is raised.
    """
    runs, baseline_name = family_runs(family, values)
    results: dict[str, SimulationResult] = {}
    failure: tuple[str, Exception] | None = None

    job_args = [(spec, scenario, run, horizon, seed, weights) for run in runs]
    if jobs <= 1:
        for run, args in zip(runs, job_args):
            try:
                results[run.name] = _execute_run(*args)
            except Exception as exc:  # noqa: BLE001 - reported via SweepError
                failure = (run.name, exc)
                break
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_worker, args) for args in job_args]
            for run, fut in zip(runs, futures):
                try:
                    name, result = fut.result()
                    results[name] = result
                except Exception as exc:  # noqa: BLE001
                    failure = (run.name, exc)
                    for other in futures:
                        other.cancel()
                    break

    reports = _attach_deviations(
        {name: compute_kpis(res) for name, res in results.items()},
        baseline_name)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for run in runs:
            if run.name not in results:
                continue
            run_dir = out_dir / run.name
            run_dir.mkdir(parents=True, exist_ok=True)
            write_trace_csv(results[run.name], run_dir / "trace.csv")
            (run_dir / "kpi.json").write_text(
                reports[run.name].to_json() + "\n", encoding="utf-8")
        named = [(run.name, reports[run.name]) for run in runs
                 if run.name in reports]
        (out_dir / "table.txt").write_text(
            format_kpi_table(named, spec, seed=seed), encoding="utf-8")

    if failure is not None:
        name, exc = failure
        raise SweepError(f"run '{name}' failed: {exc}") from exc
    return SweepResult(family, baseline_name, runs, reports, results, out_dir)


def _attach_deviations(reports: dict[str, KpiReport],
                       baseline_name: str) -> dict[str, KpiReport]:
    if baseline_name not in reports:
        return reports
    base = reports[baseline_name]
    return {name: kpi_deviations(rep, base, baseline_name)
            for name, rep in reports.items()}


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def format_kpi_table(reports: list[tuple[str, KpiReport]],
                     spec: NetworkSpec, seed: int | None = None) -> str:
    """Aligned text table: overflow volumes, totals and deviations per run."""
    point_ids = [t.id for t in ordered_tanks(spec)]
    point_ids += [p.id for p in spec.pipe_csos]

    def pct(report: KpiReport, key: str) -> str:
        if report.deviations is None or report.deviations.get(key) is None:
            return "n/a"
        return f"{report.deviations[key]:+.4f}"

    rows: list[tuple[str, list[str]]] = []
    for pid in point_ids:
        rows.append((pid, [f"{rep.cso_m3.get(pid, 0.0):.1f}"
                           for _, rep in reports]))
    rows.append(("River", [f"{rep.river_m3:.1f}" for _, rep in reports]))
    rows.append(("Creek", [f"{rep.creek_m3:.1f}" for _, rep in reports]))
    rows.append(("Total", [f"{rep.total_m3:.1f}" for _, rep in reports]))
    rows.append(("R.%", [pct(rep, "river_pct") for _, rep in reports]))
    rows.append(("C.%", [pct(rep, "creek_pct") for _, rep in reports]))
    rows.append(("Tot.%", [pct(rep, "total_pct") for _, rep in reports]))
    rows.append(("WWTP Vol.", [f"{rep.wwtp_m3:.1f}" for _, rep in reports]))
    rows.append(("Imp.%", [pct(rep, "wwtp_pct") for _, rep in reports]))

    headers = [name for name, _ in reports]
    label_w = max([len(r[0]) for r in rows] + [10])
    col_ws = [max(len(h), max((len(r[1][i]) for r in rows), default=0), 8)
              for i, h in enumerate(headers)]

    lines = []
    if seed is not None:
        lines.append(f"# seed: {seed}")
    lines.append(f"# network: {spec.signature()}")
    lines.append(" " * label_w + "  "
                 + "  ".join(h.rjust(w) for h, w in zip(headers, col_ws)))
    for label, cells in rows:
        lines.append(label.ljust(label_w) + "  "
                     + "  ".join(c.rjust(w) for c, w in zip(cells, col_ws)))
    return "\n".join(lines) + "\n"

"""Closed-loop plant simulation, scenarios, sampling and KPI accounting.

The plant applies mass balance exactly: tanks spill over their weirs when
the volume update exceeds capacity, controlled releases are limited by the
commanded value, the pipe capacity and the water actually available, and
pipe overflow structures on runoff lines spill everything above their
capacity before the flow enters the network.  Every step's mass residual is
audited and reported.

Runoff realizations are drawn per (seed, step, input) from counter-based
streams, so results are reproducible regardless of execution order or
process count.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .controller import (
    Controller,
    ControlDecision,
    DisturbanceForecast,
    MpcConfig,
    exact_state,
)
from .constraints import CostWeights
from .network import NetworkSpec, ordered_delays, ordered_tanks, topological_order

log = logging.getLogger(__name__)


class ScenarioError(Exception):
    """The scenario document is malformed or incompatible with the network."""


# ---------------------------------------------------------------------------
# Uncertainty model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UncertaintyModel:
    """Forecast uncertainty and bias description.

    ``bound`` is the relative width of the uncertainty interval around the
    true runoff: realizations live in [0, (1+bound) w] with standard
    deviation bound*w/3.  ``scale``/``offset`` bias the controller's forecast
    mean (mean = scale * w + offset) without affecting the realizations.
    ``gamma`` is the confidence level a chance-constrained controller runs at.
    """

    gamma: float = 0.9
    bound: float = 0.5
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not 0.5 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0.5, 1], got {self.gamma}")
        if not 0.0 <= self.bound < 1.0:
            raise ValueError(f"bound must be in [0, 1), got {self.bound}")
        if self.scale <= 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if self.offset < 0.0:
            raise ValueError(f"offset must be >= 0, got {self.offset}")


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

SHAPES = ("triangle", "block")

_SCENARIO_KEYS = {"name", "delta_t_s", "n_steps", "dry_weather_m3s", "storms"}
_STORM_KEYS = {"input", "start_step", "duration_steps", "peak_m3s", "shape"}


@dataclass(frozen=True)
class Storm:
    input: str
    start_step: int
    duration_steps: int
    peak_m3s: float
    shape: str = "triangle"


@dataclass(frozen=True)
class Scenario:
    name: str
    delta_t_s: float
    n_steps: int
    dry_weather_m3s: float
    storms: tuple[Storm, ...]


def parse_scenario(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario JSON error at line {exc.lineno}, "
                            f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(raw) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario key(s) {sorted(unknown)}")
    for key in ("name", "delta_t_s", "n_steps", "dry_weather_m3s"):
        if key not in raw:
            raise ScenarioError(f"missing scenario key '{key}'")
    n_steps = raw["n_steps"]
    if not isinstance(n_steps, int) or n_steps < 1:
        raise ScenarioError("'n_steps' must be an integer >= 1")
    if not (isinstance(raw["dry_weather_m3s"], (int, float))
            and raw["dry_weather_m3s"] >= 0):
        raise ScenarioError("'dry_weather_m3s' must be a number >= 0")
    storms = []
    for i, entry in enumerate(raw.get("storms", [])):
        where = f"storms[{i}]"
        if not isinstance(entry, dict):
            raise ScenarioError(f"{where} must be an object")
        unknown = set(entry) - _STORM_KEYS
        if unknown:
            raise ScenarioError(f"unknown key(s) {sorted(unknown)} in {where}")
        for key in ("input", "start_step", "duration_steps", "peak_m3s"):
            if key not in entry:
                raise ScenarioError(f"missing key '{key}' in {where}")
        shape = entry.get("shape", "triangle")
        if shape not in SHAPES:
            raise ScenarioError(f"'shape' in {where} must be one of {SHAPES}")
        if not (isinstance(entry["duration_steps"], int)
                and entry["duration_steps"] >= 1):
            raise ScenarioError(f"'duration_steps' in {where} must be >= 1")
        if entry["peak_m3s"] < 0:
            raise ScenarioError(f"'peak_m3s' in {where} must be >= 0")
        storms.append(Storm(str(entry["input"]), int(entry["start_step"]),
                            int(entry["duration_steps"]),
                            float(entry["peak_m3s"]), shape))
    return Scenario(str(raw["name"]), float(raw["delta_t_s"]), n_steps,
                    float(raw["dry_weather_m3s"]), tuple(storms))


def parse_scenario_file(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def scenario_series(spec: NetworkSpec, scenario: Scenario) -> np.ndarray:
    """True runoff per input over the scenario, shape (n_inputs, n_steps)."""
    if abs(scenario.delta_t_s - spec.delta_t_s) > 1e-9:
        raise ScenarioError(
            f"scenario time step {scenario.delta_t_s}s does not match the "
            f"network time step {spec.delta_t_s}s")
    ids = spec.runoff_inputs
    series = np.full((len(ids), scenario.n_steps), scenario.dry_weather_m3s)
    for storm in scenario.storms:
        if storm.input not in ids:
            raise ScenarioError(
                f"storm refers to unknown runoff input '{storm.input}'")
        row = ids.index(storm.input)
        for j in range(storm.duration_steps):
            k = storm.start_step + j
            if not 0 <= k < scenario.n_steps:
                continue
            if storm.shape == "block":
                pulse = storm.peak_m3s
            else:
                # symmetric triangle over the duration
                half = (storm.duration_steps - 1) / 2.0
                pulse = storm.peak_m3s * (1.0 - abs(j - half) / (half + 1e-12)) \
                    if storm.duration_steps > 1 else storm.peak_m3s
            series[row, k] += max(pulse, 0.0)
    return series


# ---------------------------------------------------------------------------
# Stochastic realizations
# ---------------------------------------------------------------------------

def disturbance_stream(seed: int, step: int, input_index: int) -> np.random.Generator:
    """Counter-based stream for one (seed, step, input) cell.

    Streams are independent of execution order and process layout, which
    makes parallel sweeps reproducible.
    """
    bg = np.random.Philox(key=seed, counter=[0, 0, step, input_index])
    return np.random.Generator(bg)


def sample_runoff(true_value: float, bound: float, seed: int, step: int,
                  input_index: int) -> float:
    """Draw one runoff realization around its true value.

    Truncated normal: mean w, standard deviation bound*w/3, support
    [0, (1+bound) w] (rejection sampling; after 100 misses the draw is
    clipped, which for a three-sigma band essentially never happens).
    """
    if bound == 0.0 or true_value == 0.0:
        return float(true_value)
    sd = bound * true_value / 3.0
    lo, hi = 0.0, (1.0 + bound) * true_value
    rng = disturbance_stream(seed, step, input_index)
    for _ in range(100):
        draw = rng.normal(true_value, sd)
        if lo <= draw <= hi:
            return float(draw)
    return float(min(max(true_value, lo), hi))


def sample_all_inputs(truth: np.ndarray, bound: float, seed: int,
                      step: int) -> np.ndarray:
    return np.array([sample_runoff(float(truth[i]), bound, seed, step, i)
                     for i in range(truth.shape[0])])


# ---------------------------------------------------------------------------
# Forecasts
# ---------------------------------------------------------------------------

def make_forecast(spec: NetworkSpec, series: np.ndarray, step: int,
                  horizon: int, uncertainty: UncertaintyModel) -> DisturbanceForecast:
    """Controller forecast window starting at ``step``.

    The true series is windowed (holding the last value beyond the end) and
    biased by the uncertainty model's scale and offset; the believed standard
    deviation is bound*actual/3 per entry (derived from the unbiased series,
    matching how the realizations are drawn).
    """
    n_inputs, n_steps = series.shape
    window = np.empty((n_inputs, horizon))
    for j in range(horizon):
        k = min(step + j, n_steps - 1)
        window[:, j] = series[:, k]
    mean = uncertainty.scale * window + uncertainty.offset
    std = uncertainty.bound * window / 3.0
    return DisturbanceForecast(spec.runoff_inputs, mean, std)


# ---------------------------------------------------------------------------
# Plant
# ---------------------------------------------------------------------------

@dataclass
class PlantState:
    """Physical state: tank volumes (topological order) and delay buffers."""

    volumes: np.ndarray
    buffers: dict[str, np.ndarray]

    def copy(self) -> "PlantState":
        return PlantState(self.volumes.copy(),
                          {k: v.copy() for k, v in self.buffers.items()})

    def storage_m3(self, spec: NetworkSpec) -> float:
        total = float(np.sum(self.volumes))
        for buf in self.buffers.values():
            total += float(np.sum(buf)) * spec.delta_t_s
        return total


@dataclass(frozen=True)
class PlantOutputs:
    applied_q_u: dict[str, float]
    weir_spill_m3s: dict[str, float]
    pipe_spill_m3s: dict[str, float]
    wwtp_m3s: float
    exit_m3s: dict[str, float]
    mass_residual_rel: float


def plant_step(spec: NetworkSpec, state: PlantState,
               commands: dict[str, float],
               runoff: np.ndarray) -> tuple[PlantState, PlantOutputs]:
    """Advance the plant one step under commanded releases and true runoff.

    Elements are evaluated in topological order; every outflow depends only
    on the current state and already-computed upstream outflows, so one pass
    suffices.  Mass is conserved exactly up to floating point roundoff and
    the residual is returned for auditing.
    """
    dt = spec.delta_t_s
    tanks = ordered_tanks(spec)
    tank_index = {t.id: i for i, t in enumerate(tanks)}
    tank_by_id = {t.id: t for t in tanks}
    delay_by_id = {d.id: d for d in ordered_delays(spec)}
    inflow_map = spec.inflow_map()
    split = {eid: spec.split_factor(eid)
             for eid in spec.tank_ids + spec.delay_ids + spec.runoff_inputs}

    storage_before = state.storage_m3(spec)
    new = state.copy()
    outflow: dict[str, float] = {}
    weir: dict[str, float] = {}
    pipe_spill: dict[str, float] = {}
    applied: dict[str, float] = {}

    for eid in topological_order(spec):
        if eid in spec.runoff_inputs:
            w = float(runoff[spec.runoff_inputs.index(eid)])
            pipe = spec.pipe_for_input(eid)
            if pipe is not None:
                delivered = min(w, pipe.capacity_m3s)
                pipe_spill[pipe.id] = w - delivered
            else:
                delivered = w
            outflow[eid] = delivered
            continue

        q_in = 0.0
        for src in inflow_map.get(eid, ()):
            q_in += split[src] * outflow[src]

        if eid in tank_by_id:
            tank = tank_by_id[eid]
            i = tank_index[eid]
            v = float(new.volumes[i])
            if tank.kind == "passive":
                out = tank.beta_per_s * v
                v_next = (1.0 - dt * tank.beta_per_s) * v + dt * q_in
            else:
                cmd = float(commands.get(eid, 0.0))
                available = v / dt + q_in
                out = min(max(cmd, 0.0), tank.q_u_max_m3s, available)
                applied[eid] = out
                v_next = v + dt * (q_in - out)
            spill = max(0.0, (v_next - tank.v_max_m3) / dt)
            weir[eid] = spill
            new.volumes[i] = min(v_next, tank.v_max_m3)
            outflow[eid] = out
        else:
            buf = new.buffers[eid]
            out = float(buf[0])
            new.buffers[eid] = np.append(buf[1:], q_in)
            outflow[eid] = out

    wwtp = outflow[spec.wwtp_sink]
    exits = {eid: outflow[eid] for eid in spec.exit_elements()}

    inflow_total = dt * float(np.sum(runoff))
    outflow_total = dt * (sum(pipe_spill.values()) + sum(weir.values())
                          + wwtp + sum(exits.values()))
    storage_after = new.storage_m3(spec)
    residual = abs(storage_after - storage_before - (inflow_total - outflow_total))
    residual_rel = residual / max(1.0, inflow_total, storage_before)

    return new, PlantOutputs(
        applied_q_u=applied,
        weir_spill_m3s=weir,
        pipe_spill_m3s=pipe_spill,
        wwtp_m3s=wwtp,
        exit_m3s=exits,
        mass_residual_rel=residual_rel,
    )


def dry_weather_equilibrium(spec: NetworkSpec,
                            dry_flow_m3s: float) -> tuple[PlantState, dict[str, float]]:
    """Steady state under constant dry-weather runoff on every input.

    Every element passes its steady inflow through; tank volumes settle at
    inflow/beta for both kinds.  Returns the state and the steady throttle
    commands (the natural initial previous-control values).
    """
    inflow_map = spec.inflow_map()
    split = {eid: spec.split_factor(eid)
             for eid in spec.tank_ids + spec.delay_ids + spec.runoff_inputs}
    tanks = ordered_tanks(spec)
    tank_by_id = {t.id: t for t in tanks}
    outflow: dict[str, float] = {}
    volumes = np.zeros(len(tanks))
    buffers: dict[str, np.ndarray] = {}
    commands: dict[str, float] = {}

    for eid in topological_order(spec):
        if eid in spec.runoff_inputs:
            pipe = spec.pipe_for_input(eid)
            flow = dry_flow_m3s
            if pipe is not None:
                flow = min(flow, pipe.capacity_m3s)
            outflow[eid] = flow
            continue
        q_in = sum(split[src] * outflow[src]
                   for src in inflow_map.get(eid, ()))
        if eid in tank_by_id:
            tank = tank_by_id[eid]
            if tank.kind == "controlled":
                q_out = min(q_in, tank.q_u_max_m3s)
                commands[eid] = q_out
            else:
                q_out = q_in
            idx = [t.id for t in tanks].index(eid)
            volumes[idx] = min(q_out / tank.beta_per_s, tank.v_max_m3)
            outflow[eid] = q_out
        else:
            steps = spec.delay(eid).steps
            buffers[eid] = np.full(steps, q_in)
            outflow[eid] = q_in
    return PlantState(volumes, buffers), commands


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

@dataclass
class SimulationResult:
    """Everything a run produces: trace arrays, totals, diagnostics."""

    spec: NetworkSpec
    scenario_name: str
    seed: int
    n_steps: int
    tank_ids: tuple[str, ...]
    controlled_ids: tuple[str, ...]
    pipe_ids: tuple[str, ...]
    runoff_ids: tuple[str, ...]
    volumes: np.ndarray          # (n_steps, n_tanks), end-of-step
    applied_q_u: np.ndarray      # (n_steps, n_controlled)
    weir_spill: np.ndarray       # (n_steps, n_tanks)
    pipe_spill: np.ndarray       # (n_steps, n_pipes)
    realized_runoff: np.ndarray  # (n_steps, n_inputs)
    wwtp_flow: np.ndarray        # (n_steps,)
    exit_flow: np.ndarray        # (n_steps,)
    plan_weir_first: np.ndarray  # (n_steps, n_tanks)
    slack_upper_first: np.ndarray  # (n_steps, n_tanks)
    objective: np.ndarray        # (n_steps,)
    kkt_worst: np.ndarray        # (n_steps,)
    solver_iterations: np.ndarray
    mass_residual_max: float
    solver_warnings: int

    def cso_volumes(self) -> dict[str, float]:
        dt = self.spec.delta_t_s
        out: dict[str, float] = {}
        for j, tid in enumerate(self.tank_ids):
            out[tid] = dt * float(np.sum(self.weir_spill[:, j]))
        for j, pid in enumerate(self.pipe_ids):
            out[pid] = dt * float(np.sum(self.pipe_spill[:, j]))
        return out

    def wwtp_volume(self) -> float:
        return self.spec.delta_t_s * float(np.sum(self.wwtp_flow))


def run_closed_loop(spec: NetworkSpec, config: MpcConfig,
                    weights: CostWeights | None,
                    uncertainty: UncertaintyModel, scenario: Scenario,
                    seed: int = 0,
                    initial_state: PlantState | None = None) -> SimulationResult:
    """Simulate the controller against the plant over a whole scenario.

    The controller sees measured states (zero variance), biased forecasts
    and the configured confidence level; the plant is driven by sampled
    runoff realizations around the true series.
    """
    series = scenario_series(spec, scenario)
    n_steps = scenario.n_steps
    tanks = ordered_tanks(spec)
    if initial_state is None:
        state, steady_cmd = dry_weather_equilibrium(spec, scenario.dry_weather_m3s)
    else:
        state, steady_cmd = initial_state.copy(), None
    controller = Controller(spec, config, weights,
                            initial_previous_q_u=steady_cmd)

    n_tanks = len(tanks)
    n_ctrl = len(controller.layout.controlled_ids)
    pipe_ids = tuple(p.id for p in spec.pipe_csos)
    res = SimulationResult(
        spec=spec, scenario_name=scenario.name, seed=seed, n_steps=n_steps,
        tank_ids=tuple(t.id for t in tanks),
        controlled_ids=controller.layout.controlled_ids,
        pipe_ids=pipe_ids, runoff_ids=spec.runoff_inputs,
        volumes=np.zeros((n_steps, n_tanks)),
        applied_q_u=np.zeros((n_steps, n_ctrl)),
        weir_spill=np.zeros((n_steps, n_tanks)),
        pipe_spill=np.zeros((n_steps, len(pipe_ids))),
        realized_runoff=np.zeros((n_steps, len(spec.runoff_inputs))),
        wwtp_flow=np.zeros(n_steps),
        exit_flow=np.zeros(n_steps),
        plan_weir_first=np.zeros((n_steps, n_tanks)),
        slack_upper_first=np.zeros((n_steps, n_tanks)),
        objective=np.zeros(n_steps),
        kkt_worst=np.zeros(n_steps),
        solver_iterations=np.zeros(n_steps, dtype=int),
        mass_residual_max=0.0,
        solver_warnings=0,
    )

    for k in range(n_steps):
        moments = exact_state(spec, state.volumes,
                              {d: state.buffers[d] for d in state.buffers})
        forecast = make_forecast(spec, series, k, config.horizon, uncertainty)
        decision = controller.step(moments, forecast)

        realized = sample_all_inputs(series[:, k], uncertainty.bound, seed, k)
        state, outputs = plant_step(spec, state, decision.q_u_first, realized)

        res.volumes[k] = state.volumes
        res.applied_q_u[k] = [outputs.applied_q_u.get(t, 0.0)
                              for t in res.controlled_ids]
        res.weir_spill[k] = [outputs.weir_spill_m3s[t.id] for t in tanks]
        res.pipe_spill[k] = [outputs.pipe_spill_m3s.get(p, 0.0)
                             for p in pipe_ids]
        res.realized_runoff[k] = realized
        res.wwtp_flow[k] = outputs.wwtp_m3s
        res.exit_flow[k] = sum(outputs.exit_m3s.values())
        res.plan_weir_first[k] = decision.weir_plan[:, 0]
        res.slack_upper_first[k] = decision.slack_upper[:, 0]
        res.objective[k] = decision.objective
        res.kkt_worst[k] = decision.kkt.worst
        res.solver_iterations[k] = decision.solver_iterations
        res.mass_residual_max = max(res.mass_residual_max,
                                    outputs.mass_residual_rel)
        res.solver_warnings += int(decision.warning)

        # keep the roughness reference on what the actuator actually did
        controller.previous_q_u = np.array(
            [outputs.applied_q_u.get(t, 0.0) for t in res.controlled_ids])

    return res


# ---------------------------------------------------------------------------
# KPIs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KpiReport:
    """Overflow volumes per discharge point plus receiving-water totals.

    ``deviations`` holds percentage differences against a named baseline
    (None when no baseline applies); entries are None when the baseline
    value is zero (division undefined).
    """

    seed: int
    cso_m3: dict[str, float]
    river_m3: float
    creek_m3: float
    total_m3: float
    wwtp_m3: float
    baseline: str | None = None
    deviations: dict[str, float | None] | None = None

    def rounded(self, ndigits: int = 3) -> "KpiReport":
        dev = None
        if self.deviations is not None:
            dev = {k: (None if v is None else round(v, 6))
                   for k, v in self.deviations.items()}
        return KpiReport(
            seed=self.seed,
            cso_m3={k: round(v, ndigits) for k, v in self.cso_m3.items()},
            river_m3=round(self.river_m3, ndigits),
            creek_m3=round(self.creek_m3, ndigits),
            total_m3=round(self.total_m3, ndigits),
            wwtp_m3=round(self.wwtp_m3, ndigits),
            baseline=self.baseline,
            deviations=dev,
        )

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "cso_m3": self.cso_m3,
            "river_m3": self.river_m3,
            "creek_m3": self.creek_m3,
            "total_m3": self.total_m3,
            "wwtp_m3": self.wwtp_m3,
            "baseline": self.baseline,
            "deviations": self.deviations,
        }
        return json.dumps(doc, indent=2)


def receiving_water_of(spec: NetworkSpec, point_id: str) -> str:
    for t in spec.tanks:
        if t.id == point_id:
            return t.receiving_water
    for p in spec.pipe_csos:
        if p.id == point_id:
            return p.receiving_water
    raise KeyError(point_id)


def compute_kpis(result: SimulationResult) -> KpiReport:
    spec = result.spec
    cso = result.cso_volumes()
    river = sum(v for k, v in cso.items()
                if receiving_water_of(spec, k) == "river")
    creek = sum(v for k, v in cso.items()
                if receiving_water_of(spec, k) == "creek")
    return KpiReport(
        seed=result.seed,
        cso_m3=cso,
        river_m3=river,
        creek_m3=creek,
        total_m3=river + creek,
        wwtp_m3=result.wwtp_volume(),
    ).rounded()


def _pct(base: float, value: float, sign: float) -> float | None:
    if base == 0.0:
        return None
    return sign * (value - base) / base * 100.0


def kpi_deviations(candidate: KpiReport, baseline: KpiReport,
                   baseline_name: str) -> KpiReport:
    """Attach percentage deviations against a baseline report.

    Overflow improvements are positive when the candidate spills less
    ((base - cand)/base); treatment gain is positive when the candidate
    sends more to the plant ((cand - base)/base).  Zero baselines give None.
    """
    dev = {
        "river_pct": _pct(baseline.river_m3, candidate.river_m3, -1.0),
        "creek_pct": _pct(baseline.creek_m3, candidate.creek_m3, -1.0),
        "total_pct": _pct(baseline.total_m3, candidate.total_m3, -1.0),
        "wwtp_pct": _pct(baseline.wwtp_m3, candidate.wwtp_m3, +1.0),
    }
    dev = {k: (None if v is None else round(v, 6)) for k, v in dev.items()}
    return KpiReport(
        seed=candidate.seed,
        cso_m3=dict(candidate.cso_m3),
        river_m3=candidate.river_m3,
        creek_m3=candidate.creek_m3,
        total_m3=candidate.total_m3,
        wwtp_m3=candidate.wwtp_m3,
        baseline=baseline_name,
        deviations=dev,
    )


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------

def write_trace_csv(result: SimulationResult, path) -> None:
    spec = result.spec
    header = [
        f"# network: {spec.signature()}",
        f"# scenario: {result.scenario_name}",
        f"# seed: {result.seed}",
        f"# delta_t_s: {spec.delta_t_s}",
        f"# controlled: {','.join(result.controlled_ids)}",
    ]
    cols = ["step", "time_s"]
    cols += [f"w_{r}" for r in result.runoff_ids]
    cols += [f"v_{t}" for t in result.tank_ids]
    cols += [f"qu_{t}" for t in result.controlled_ids]
    cols += [f"spill_{t}" for t in result.tank_ids]
    cols += [f"pipespill_{p}" for p in result.pipe_ids]
    cols += ["wwtp_m3s", "exit_m3s"]
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(line + "\n")
        fh.write(",".join(cols) + "\n")
        dt = spec.delta_t_s
        for k in range(result.n_steps):
            row = [str(k), repr(float(k * dt))]
            row += [repr(float(v)) for v in result.realized_runoff[k]]
            row += [repr(float(v)) for v in result.volumes[k]]
            row += [repr(float(v)) for v in result.applied_q_u[k]]
            row += [repr(float(v)) for v in result.weir_spill[k]]
            row += [repr(float(v)) for v in result.pipe_spill[k]]
            row += [repr(float(result.wwtp_flow[k])),
                    repr(float(result.exit_flow[k]))]
            fh.write(",".join(row) + "\n")


def read_trace_csv(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Read a trace written by ``write_trace_csv``: (metadata, columns)."""
    meta: dict[str, str] = {}
    rows: list[list[str]] = []
    names: list[str] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif names is None:
                names = line.split(",")
            elif line:
                rows.append(line.split(","))
    if names is None:
        raise ValueError(f"trace file {path} has no header row")
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(names)))
    return meta, {name: data[:, i] for i, name in enumerate(names)}

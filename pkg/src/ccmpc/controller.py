"""Receding-horizon controller built on the condensed prediction and QP.

One controller step takes measured state moments and a runoff forecast,
tightens the constraint system for the configured confidence level, solves
the resulting QP and returns the first-move throttle commands together with
the full predicted trajectories and solver diagnostics.

The constraint structure, condensed matrices and cost Hessian depend only on
the network and horizon, so they are assembled once per controller and only
the right-hand side, the forecast-dependent gradient terms and the warm
start change from step to step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import qp
from .constraints import (
    TAG_SLACK_BOUND_S,
    TAG_TANK_UPPER_AVOID,
    ConstraintSystem,
    CostModel,
    CostWeights,
    assemble_chance,
    assemble_deterministic,
    build_cost,
    tightened_rhs,
    tightening_offsets,
)
from .network import NetworkSpec, ordered_delays, ordered_tanks
from .prediction import CondensedPrediction, HorizonLayout, condense

log = logging.getLogger(__name__)

MODE_DET = "det"
MODE_CC = "cc"

Q_U_QUANTUM = 1e-6
"""Applied throttle commands are rounded to this resolution (m3/s)."""


class ControlError(Exception):
    """The controller could not produce a usable decision."""


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 24
    mode: str = MODE_CC
    gamma: float = 0.9
    solver_tol: float = 1e-9
    solver_max_iter: int = 60

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.mode not in (MODE_DET, MODE_CC):
            raise ValueError(f"mode must be '{MODE_DET}' or '{MODE_CC}'")
        if not 0.5 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0.5, 1], got {self.gamma}")


@dataclass(frozen=True)
class StateMoments:
    """Mean and variance of the full network state.

    ``tank_mean``/``tank_var`` follow the topological tank order;
    ``delay_mean``/``delay_var`` map delay ids to oldest-first buffer moments.
    """

    tank_mean: np.ndarray
    tank_var: np.ndarray
    delay_mean: dict[str, np.ndarray]
    delay_var: dict[str, np.ndarray]

    def __post_init__(self):
        if np.any(np.asarray(self.tank_var) < 0):
            raise ValueError("tank volume variances must be >= 0")
        for did, v in self.delay_var.items():
            if np.any(np.asarray(v) < 0):
                raise ValueError(f"delay '{did}' variances must be >= 0")

    def x0_vectors(self, layout: HorizonLayout) -> tuple[np.ndarray, np.ndarray]:
        mean = np.zeros(layout.n_x0)
        var = np.zeros(layout.n_x0)
        mean[:layout.n_tanks] = self.tank_mean
        var[:layout.n_tanks] = self.tank_var
        for did in layout.delay_ids:
            sl = layout.x0_delay_slice(did)
            mean[sl] = self.delay_mean[did]
            var[sl] = self.delay_var[did]
        return mean, var


def exact_state(spec: NetworkSpec, tank_volumes: np.ndarray,
                delay_buffers: dict[str, np.ndarray]) -> StateMoments:
    """Zero-variance moments for a fully measured state."""
    tanks = ordered_tanks(spec)
    return StateMoments(
        tank_mean=np.asarray(tank_volumes, dtype=float).copy(),
        tank_var=np.zeros(len(tanks)),
        delay_mean={d.id: np.asarray(delay_buffers[d.id], dtype=float).copy()
                    for d in ordered_delays(spec)},
        delay_var={d.id: np.zeros(d.steps) for d in ordered_delays(spec)},
    )


@dataclass(frozen=True)
class DisturbanceForecast:
    """Per-input runoff forecast moments over the horizon.

    ``mean``/``std`` have shape (n_inputs, horizon), rows following
    ``input_ids``.  Both must be nonnegative.
    """

    input_ids: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != std.shape or mean.shape[0] != len(self.input_ids):
            raise ValueError("forecast mean/std shapes do not match input ids")
        if np.any(mean < 0):
            raise ValueError("forecast means must be >= 0")
        if np.any(std < 0):
            raise ValueError("forecast deviations must be >= 0")

    @property
    def horizon(self) -> int:
        return int(np.asarray(self.mean).shape[1])

    def stacked(self, layout: HorizonLayout) -> tuple[np.ndarray, np.ndarray]:
        """Flatten to the (input-major, steps inner) stacked layout."""
        if self.horizon != layout.horizon:
            raise ValueError(
                f"forecast horizon {self.horizon} != layout horizon {layout.horizon}")
        if tuple(self.input_ids) != layout.runoff_ids:
            raise ValueError("forecast input ids do not match the network")
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        var = (np.asarray(self.std, dtype=float) ** 2).reshape(-1)
        return mean, var


@dataclass(frozen=True)
class ControlDecision:
    """First-move commands plus the full plan and solver diagnostics."""

    q_u_first: dict[str, float]
    q_u_first_raw: dict[str, float]
    q_u_plan: np.ndarray            # (n_controlled, horizon)
    weir_plan: np.ndarray           # (n_tanks, horizon)
    predicted_volume_mean: np.ndarray   # (n_tanks, horizon), steps 1..N
    predicted_volume_std: np.ndarray
    slack_lower: np.ndarray         # s, (n_tanks, horizon); zeros in det mode
    slack_upper: np.ndarray         # c, (n_tanks, horizon); zeros in det mode
    objective: float
    solver_status: str
    solver_iterations: int
    kkt: qp.KktResiduals
    warning: bool


def _quantize(value: float, upper: float) -> float:
    return float(min(max(round(value, 6), 0.0), upper))


class Controller:
    """Stateful MPC wrapper holding all step-invariant assemblies."""

    def __init__(self, spec: NetworkSpec, config: MpcConfig,
                 weights: CostWeights | None = None,
                 initial_previous_q_u: dict[str, float] | None = None):
        self.spec = spec
        self.config = config
        self.weights = weights if weights is not None else CostWeights()
        self.pred: CondensedPrediction = condense(spec, config.horizon)
        self.layout = self.pred.layout
        if config.mode == MODE_DET:
            self.system: ConstraintSystem = assemble_deterministic(self.pred, spec)
        else:
            self.system = assemble_chance(self.pred, spec)
        self.cost: CostModel = build_cost(self.pred, spec, self.weights,
                                          with_slack=config.mode == MODE_CC)
        self._a_full = self.system.decision_matrix()
        self._q_u_max = np.array([t.q_u_max_m3s for t in ordered_tanks(spec)
                                  if t.kind == "controlled"])
        # Presolve bookkeeping.  Slack-bound rows pin their s column when the
        # margin is numerically zero; overflow-avoidance rows carry no chance
        # content at zero margin and drop out together with their c column,
        # which is what makes the zero-margin controller coincide with the
        # deterministic one.
        self._slack_bound_rows = [
            (i, int(np.nonzero(self.system.omega_s[i])[0][0]))
            for i in range(self.system.n_rows)
            if self.system.tag[i] == TAG_SLACK_BOUND_S
        ]
        self._avoid_rows = [
            (i, int(np.nonzero(self.system.omega_c[i])[0][0]))
            for i in range(self.system.n_rows)
            if self.system.tag[i] == TAG_TANK_UPPER_AVOID
        ]
        self.step_index = 0
        n_c = self.layout.n_controlled
        if initial_previous_q_u is None:
            self.previous_q_u = np.zeros(n_c)
        else:
            self.previous_q_u = np.array(
                [initial_previous_q_u[t] for t in self.layout.controlled_ids])
        self._warm: np.ndarray | None = None

    # -- solving --------------------------------------------------------

    def step(self, state: StateMoments, forecast: DisturbanceForecast,
             previous_q_u: dict[str, float] | None = None) -> ControlDecision:
        lay = self.layout
        if previous_q_u is not None:
            self.previous_q_u = np.array(
                [previous_q_u[t] for t in lay.controlled_ids])
        x0_mean, x0_var = state.x0_vectors(lay)
        w_mean, w_var = forecast.stacked(lay)

        offsets = tightening_offsets(self.system, x0_var, w_var,
                                     self.config.gamma)
        b = tightened_rhs(self.system, x0_mean, x0_var, w_mean, w_var,
                          self.config.gamma, offsets=offsets)
        g = self.cost.gradient(self.previous_q_u)

        keep = np.ones(self.system.n_dec, dtype=bool)
        row_keep = np.ones(self.system.n_rows, dtype=bool)
        off_s = self.system.n_q_u + self.system.n_q_w
        off_c = off_s + self.system.n_s
        for row, s_col in self._slack_bound_rows:
            if offsets[row] <= 1e-12:
                keep[off_s + s_col] = False
        for row, c_col in self._avoid_rows:
            if offsets[row] <= 1e-12:
                keep[off_c + c_col] = False
                row_keep[row] = False
        if not np.all(keep):
            touched = np.any(self._a_full[:, ~keep] != 0.0, axis=1)
            dead = touched & ~np.any(self._a_full[:, keep] != 0.0, axis=1)
            row_keep &= ~dead

        a_red = self._a_full[np.ix_(row_keep, keep)]
        problem = qp.QpProblem(
            h=self.cost.h_matrix[np.ix_(keep, keep)],
            g=g[keep],
            a=a_red,
            b=b[row_keep],
        )
        warm = self._warm[keep] if self._warm is not None else None
        solution = qp.solve(problem, warm_start=warm,
                            tol=self.config.solver_tol,
                            max_iter=self.config.solver_max_iter)
        if solution.status == qp.STATUS_INFEASIBLE and warm is not None:
            solution = qp.solve(problem, warm_start=None,
                                tol=self.config.solver_tol,
                                max_iter=self.config.solver_max_iter)
        if solution.status == qp.STATUS_INFEASIBLE:
            raise ControlError(
                f"step {self.step_index}: constraint system reported infeasible "
                f"({solution.message}); this indicates a numerical failure")
        warning = solution.status != qp.STATUS_OPTIMAL
        if warning:
            log.warning("step %d: solver stopped with %s (kkt %.3g)",
                        self.step_index, solution.status, solution.kkt.worst)

        x = np.zeros(self.system.n_dec)
        x[keep] = solution.x

        # Warm start for the next step: shift every per-element block one
        # step forward and repeat the terminal entry.
        n = lay.horizon
        warm_next = x.copy()
        blocks = (self.system.n_dec // n)
        for blk in range(blocks):
            seg = x[blk * n:(blk + 1) * n]
            warm_next[blk * n:(blk + 1) * n] = np.append(seg[1:], seg[-1])
        self._warm = warm_next

        decision = self._decision_from(x, solution, x0_mean, x0_var,
                                       w_mean, w_var)
        self.step_index += 1
        return decision

    def _decision_from(self, x: np.ndarray, solution: qp.QpSolution,
                       x0_mean, x0_var, w_mean, w_var) -> ControlDecision:
        lay = self.layout
        n = lay.horizon
        q_u = x[:lay.n_q_u]
        off = lay.n_q_u
        q_w = x[off:off + lay.n_q_w]
        off += lay.n_q_w
        if self.config.mode == MODE_CC:
            n_slack = lay.n_tanks * n
            s = x[off:off + n_slack]
            c = x[off + n_slack:off + 2 * n_slack]
        else:
            s = np.zeros(lay.n_tanks * n)
            c = np.zeros(lay.n_tanks * n)

        mean = (self.pred.phi_con @ q_u + self.pred.psi @ x0_mean
                + self.pred.theta @ w_mean + self.pred.gamma @ q_w)
        var = self.pred.xi_vol @ x0_var + self.pred.xi_rain @ w_var
        std = np.sqrt(np.maximum(var, 0.0))

        raw_first = {t: float(q_u[lay.q_u_index(t, 0)])
                     for t in lay.controlled_ids}
        first = {t: _quantize(raw_first[t], float(self._q_u_max[i]))
                 for i, t in enumerate(lay.controlled_ids)}
        return ControlDecision(
            q_u_first=first,
            q_u_first_raw=raw_first,
            q_u_plan=q_u.reshape(lay.n_controlled, n).copy(),
            weir_plan=q_w.reshape(lay.n_tanks, n).copy(),
            predicted_volume_mean=mean.reshape(lay.n_tanks, n),
            predicted_volume_std=std.reshape(lay.n_tanks, n),
            slack_lower=s.reshape(lay.n_tanks, n).copy(),
            slack_upper=c.reshape(lay.n_tanks, n).copy(),
            objective=self.cost.objective_value(x, self.previous_q_u,
                                                x0_mean, w_mean),
            solver_status=solution.status,
            solver_iterations=solution.iterations,
            kkt=solution.kkt,
            warning=warning_flag(solution),
        )

    # -- checkpointing ----------------------------------------------------

    def checkpoint(self, state: StateMoments) -> dict:
        lay = self.layout
        return {
            "step_index": self.step_index,
            "previous_q_u": {t: float(v) for t, v in
                             zip(lay.controlled_ids, self.previous_q_u)},
            "state": {
                "tank_mean": [float(v) for v in state.tank_mean],
                "tank_var": [float(v) for v in state.tank_var],
                "delay_mean": {d: [float(v) for v in arr]
                               for d, arr in state.delay_mean.items()},
                "delay_var": {d: [float(v) for v in arr]
                              for d, arr in state.delay_var.items()},
            },
        }

    def restore(self, checkpoint: dict) -> StateMoments:
        lay = self.layout
        self.step_index = int(checkpoint["step_index"])
        self.previous_q_u = np.array(
            [checkpoint["previous_q_u"][t] for t in lay.controlled_ids])
        self._warm = None
        st = checkpoint["state"]
        return StateMoments(
            tank_mean=np.array(st["tank_mean"], dtype=float),
            tank_var=np.array(st["tank_var"], dtype=float),
            delay_mean={d: np.array(v, dtype=float)
                        for d, v in st["delay_mean"].items()},
            delay_var={d: np.array(v, dtype=float)
                       for d, v in st["delay_var"].items()},
        )


def warning_flag(solution: qp.QpSolution) -> bool:
    return solution.status != qp.STATUS_OPTIMAL


def save_checkpoint(controller: Controller, state: StateMoments, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(controller.checkpoint(state), fh, indent=2)


def load_checkpoint(controller: Controller, path) -> StateMoments:
    with open(path, "r", encoding="utf-8") as fh:
        return controller.restore(json.load(fh))


def mpc_step(spec: NetworkSpec, config: MpcConfig, state: StateMoments,
             forecast: DisturbanceForecast,
             weights: CostWeights | None = None,
             previous_q_u: dict[str, float] | None = None) -> ControlDecision:
    """One-shot controller step; builds a fresh controller each call.

    For closed-loop use construct a ``Controller`` once and call ``step`` on
    it, which reuses all step-invariant assemblies and warm starts.
    """
    controller = Controller(spec, config, weights,
                            initial_previous_q_u=previous_q_u)
    return controller.step(state, forecast)

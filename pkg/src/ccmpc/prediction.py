"""Mean/variance propagation and stacked horizon prediction.

The controller's internal model propagates the first two moments of every
storage element under uncertain inflow forecasts:

* passive tank:   V' = (1 - dt*beta) V + dt (q_in - q_w),  q_out = beta V
                  var V' = (1 - dt*beta)^2 var V + dt^2 var q_in
                  var q_out = beta^2 var V
* controlled tank: V' = V + dt (q_in - q_u - q_w),          q_out = q_u
                  var V' = var V + dt^2 var q_in
                  var q_out = 0   (the throttle flow is a decision)
* delay:          shifts the inflow by a fixed number of steps; means and
                  variances pass through unchanged.

Weir flows q_w and throttle flows q_u are decision variables of the
optimization, so they carry no variance.  Variances of independent inflows
add; where an element feeds several consumers the flow is split in equal
parts (coefficient 1/n, variance coefficient 1/n^2).

``condense`` unrolls these recursions over a horizon into one affine map

    z = phi_con q_u + psi x0 + theta w + gamma q_w

where z stacks the predicted mean tank volumes for steps 1..N, x0 is the
full initial state (tank volumes followed by delay buffer contents) and w
stacks the runoff forecast.  The variance recursion is itself linear in the
input variances (each step squares its local coefficients and adds), so it
condenses the same way into matrices ``xi_vol``/``xi_rain`` that map the
input variances to the stacked volume variances.  Note these are not the
elementwise squares of psi/theta: squaring a summed coefficient would keep
cross terms between a tank's carried volume and its inflow, which the
step recursion deliberately drops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, ordered_delays, ordered_tanks

MAX_STACKED_ENTRIES = 50_000_000
"""Guard against accidentally huge horizon * network combinations."""


# ---------------------------------------------------------------------------
# Single-element moment steps
# ---------------------------------------------------------------------------

def step_passive_tank(mean_v: float, var_v: float, mean_q_in: float,
                      var_q_in: float, q_w: float, beta: float,
                      dt: float) -> tuple[float, float, float, float]:
    """One prediction step of a passive tank.

    Returns (mean_v_next, var_v_next, mean_q_out, var_q_out); the outflow
    moments belong to the current step (before the update).
    """
    a = 1.0 - dt * beta
    mean_q_out = beta * mean_v
    var_q_out = beta * beta * var_v
    mean_next = a * mean_v + dt * (mean_q_in - q_w)
    var_next = a * a * var_v + dt * dt * var_q_in
    return mean_next, var_next, mean_q_out, var_q_out


def step_controlled_tank(mean_v: float, var_v: float, mean_q_in: float,
                         var_q_in: float, q_u: float, q_w: float,
                         dt: float) -> tuple[float, float, float, float]:
    """One prediction step of a controlled tank; outflow equals the command."""
    mean_next = mean_v + dt * (mean_q_in - q_u - q_w)
    var_next = var_v + dt * dt * var_q_in
    return mean_next, var_next, q_u, 0.0


def step_delay(mean_in: float, var_in: float, means: np.ndarray,
               vars_: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
    """One step of a transport delay.

    ``means``/``vars_`` hold the buffered flow moments, oldest first.  Returns
    (mean_out, var_out, means_next, vars_next) without mutating the inputs.
    """
    mean_out = float(means[0])
    var_out = float(vars_[0])
    means_next = np.append(means[1:], mean_in)
    vars_next = np.append(vars_[1:], var_in)
    return mean_out, var_out, means_next, vars_next


# ---------------------------------------------------------------------------
# Decision / state vector layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HorizonLayout:
    """Index bookkeeping for all stacked vectors over a horizon.

    Conventions (fixed so that matrices are reproducible bit for bit):

    * tanks appear in topological order, delays in topological order;
    * per-element blocks are contiguous with the step index running fastest
      ("steps inner");
    * the initial state x0 stacks tank volumes first, then each delay's
      buffer slots oldest first;
    * the runoff vector w stacks the declared runoff inputs in declaration
      order, steps inner.
    """

    horizon: int
    tank_ids: tuple[str, ...]
    controlled_ids: tuple[str, ...]
    delay_ids: tuple[str, ...]
    delay_steps: tuple[int, ...]
    runoff_ids: tuple[str, ...]

    @property
    def n_tanks(self) -> int:
        return len(self.tank_ids)

    @property
    def n_controlled(self) -> int:
        return len(self.controlled_ids)

    @property
    def n_q_u(self) -> int:
        return self.n_controlled * self.horizon

    @property
    def n_q_w(self) -> int:
        return self.n_tanks * self.horizon

    @property
    def n_x0(self) -> int:
        return self.n_tanks + sum(self.delay_steps)

    @property
    def n_w(self) -> int:
        return len(self.runoff_ids) * self.horizon

    def q_u_index(self, tank_id: str, step: int) -> int:
        return self.controlled_ids.index(tank_id) * self.horizon + step

    def q_w_index(self, tank_id: str, step: int) -> int:
        return self.tank_ids.index(tank_id) * self.horizon + step

    def x0_tank_index(self, tank_id: str) -> int:
        return self.tank_ids.index(tank_id)

    def x0_delay_slice(self, delay_id: str) -> slice:
        offset = self.n_tanks
        for did, steps in zip(self.delay_ids, self.delay_steps):
            if did == delay_id:
                return slice(offset, offset + steps)
            offset += steps
        raise KeyError(delay_id)

    def w_index(self, runoff_id: str, step: int) -> int:
        return self.runoff_ids.index(runoff_id) * self.horizon + step

    def z_index(self, tank_id: str, step: int) -> int:
        """Row of tank volume V_{step} in z, step in 1..horizon."""
        return self.tank_ids.index(tank_id) * self.horizon + (step - 1)


def make_layout(spec: NetworkSpec, horizon: int) -> HorizonLayout:
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    tanks = ordered_tanks(spec)
    delays = ordered_delays(spec)
    return HorizonLayout(
        horizon=horizon,
        tank_ids=tuple(t.id for t in tanks),
        controlled_ids=tuple(t.id for t in tanks if t.kind == "controlled"),
        delay_ids=tuple(d.id for d in delays),
        delay_steps=tuple(d.steps for d in delays),
        runoff_ids=spec.runoff_inputs,
    )


# ---------------------------------------------------------------------------
# Condensed horizon prediction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CondensedPrediction:
    """Stacked affine prediction of mean tank volumes over the horizon.

    z = phi_con @ q_u + psi @ x0 + theta @ w + gamma @ q_w

    Rows follow ``layout.z_index`` (tank-major, steps 1..N inner).  ``xi_vol``
    and ``xi_rain`` are the condensed variance recursion: applied to the
    (x0, w) input variances they give the variance of each stacked volume,
    with merging flows and the carried volume treated as uncorrelated exactly
    like the per-step recursion does.  ``volume_row``/``volume_variance_row``
    extend both maps to step 0 (the known initial volumes) so that constraint
    assembly can reference V_k for k = 0..N as well.
    """

    layout: HorizonLayout
    phi_con: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    xi_vol: np.ndarray
    xi_rain: np.ndarray

    def volume_row(self, tank_id: str, step: int) -> tuple[np.ndarray, ...]:
        """Affine row of mean V_{step} as (q_u, x0, w, q_w) coefficient rows.

        step runs 0..horizon; step 0 is the (trivial) initial condition.
        """
        lay = self.layout
        if step == 0:
            q_u = np.zeros(lay.n_q_u)
            x0 = np.zeros(lay.n_x0)
            x0[lay.x0_tank_index(tank_id)] = 1.0
            return q_u, x0, np.zeros(lay.n_w), np.zeros(lay.n_q_w)
        r = self.z_row(tank_id, step)
        return self.phi_con[r], self.psi[r], self.theta[r], self.gamma[r]

    def z_row(self, tank_id: str, step: int) -> int:
        return self.layout.z_index(tank_id, step)

    def volume_variance_row(self, tank_id: str, step: int) -> tuple[np.ndarray, np.ndarray]:
        """Variance-map (x0, w) rows of V_{step}; step 0 gives the x0 basis."""
        lay = self.layout
        if step == 0:
            x0 = np.zeros(lay.n_x0)
            x0[lay.x0_tank_index(tank_id)] = 1.0
            return x0, np.zeros(lay.n_w)
        r = self.z_row(tank_id, step)
        return self.xi_vol[r], self.xi_rain[r]


def condense(spec: NetworkSpec, horizon: int) -> CondensedPrediction:
    """Unroll the network moment recursions into stacked horizon matrices.

    The step-by-step recursion and this stacked form are interchangeable
    for both moments; tests hold them to each other at 1e-9.  Raises
    ValueError if the stacked system would exceed the size guard.
    """
    lay = make_layout(spec, horizon)
    n_rows = lay.n_tanks * horizon
    n_cols = lay.n_q_u + lay.n_x0 + lay.n_w + lay.n_q_w
    if n_rows * n_cols > MAX_STACKED_ENTRIES:
        raise ValueError(
            f"condensed system too large: {n_rows} rows x {n_cols} cols "
            f"exceeds {MAX_STACKED_ENTRIES} entries")

    tanks = ordered_tanks(spec)
    delays = ordered_delays(spec)
    inflow = spec.inflow_map()
    dt = spec.delta_t_s

    # Affine row of every element's current volume / buffered flows over
    # columns [q_u | x0 | w | q_w], plus a parallel variance row over
    # [x0 | w].  The variance recursion squares each step's local
    # coefficient before adding, so merging flows and the carried volume
    # contribute without cross terms -- exactly like the step_* functions.
    off_x0 = lay.n_q_u
    off_w = off_x0 + lay.n_x0
    off_qw = off_w + lay.n_w
    n_var = lay.n_x0 + lay.n_w

    def basis(index: int) -> np.ndarray:
        row = np.zeros(n_cols)
        row[index] = 1.0
        return row

    def var_basis(index: int) -> np.ndarray:
        row = np.zeros(n_var)
        row[index] = 1.0
        return row

    vol_rows: dict[str, np.ndarray] = {}
    vol_var: dict[str, np.ndarray] = {}
    for t in tanks:
        vol_rows[t.id] = basis(off_x0 + lay.x0_tank_index(t.id))
        vol_var[t.id] = var_basis(lay.x0_tank_index(t.id))
    buf_rows: dict[str, list[np.ndarray]] = {}
    buf_var: dict[str, list[np.ndarray]] = {}
    for d in delays:
        sl = lay.x0_delay_slice(d.id)
        buf_rows[d.id] = [basis(off_x0 + i) for i in range(sl.start, sl.stop)]
        buf_var[d.id] = [var_basis(i) for i in range(sl.start, sl.stop)]

    split = {eid: spec.split_factor(eid)
             for eid in lay.tank_ids + lay.delay_ids + lay.runoff_ids}

    z = np.zeros((n_rows, n_cols))
    z_var = np.zeros((n_rows, n_var))
    for k in range(horizon):
        # Outflow rows at step k depend only on current state and decisions,
        # so they can be formed for all elements before any state update.
        out_rows: dict[str, np.ndarray] = {}
        out_var: dict[str, np.ndarray] = {}
        for rid in lay.runoff_ids:
            out_rows[rid] = basis(off_w + lay.w_index(rid, k))
            out_var[rid] = var_basis(lay.n_x0 + lay.w_index(rid, k))
        for t in tanks:
            if t.kind == "passive":
                b = t.beta_per_s
                out_rows[t.id] = b * vol_rows[t.id]
                out_var[t.id] = (b * b) * vol_var[t.id]
            else:
                out_rows[t.id] = basis(lay.q_u_index(t.id, k))
                out_var[t.id] = np.zeros(n_var)
        for d in delays:
            out_rows[d.id] = buf_rows[d.id][0]
            out_var[d.id] = buf_var[d.id][0]

        inflow_rows: dict[str, np.ndarray] = {}
        inflow_var: dict[str, np.ndarray] = {}
        for eid in lay.tank_ids + lay.delay_ids:
            row = np.zeros(n_cols)
            vrow = np.zeros(n_var)
            for s in inflow.get(eid, ()):
                row = row + split[s] * out_rows[s]
                vrow = vrow + (split[s] * split[s]) * out_var[s]
            inflow_rows[eid] = row
            inflow_var[eid] = vrow

        for t in tanks:
            q_w_row = basis(off_qw + lay.q_w_index(t.id, k))
            if t.kind == "passive":
                a = 1.0 - dt * t.beta_per_s
                new = a * vol_rows[t.id] + dt * (inflow_rows[t.id] - q_w_row)
                new_var = (a * a) * vol_var[t.id] + (dt * dt) * inflow_var[t.id]
            else:
                q_u_row = basis(lay.q_u_index(t.id, k))
                new = vol_rows[t.id] + dt * (inflow_rows[t.id] - q_u_row - q_w_row)
                new_var = vol_var[t.id] + (dt * dt) * inflow_var[t.id]
            vol_rows[t.id] = new
            vol_var[t.id] = new_var
            z[lay.z_index(t.id, k + 1)] = new
            z_var[lay.z_index(t.id, k + 1)] = new_var
        for d in delays:
            buf_rows[d.id] = buf_rows[d.id][1:] + [inflow_rows[d.id]]
            buf_var[d.id] = buf_var[d.id][1:] + [inflow_var[d.id]]

    phi_con = z[:, :lay.n_q_u].copy()
    psi = z[:, off_x0:off_w].copy()
    theta = z[:, off_w:off_qw].copy()
    gamma = z[:, off_qw:].copy()
    xi_vol = z_var[:, :lay.n_x0].copy()
    xi_rain = z_var[:, lay.n_x0:].copy()
    for m in (phi_con, psi, theta, gamma, xi_vol, xi_rain):
        m.setflags(write=False)
    return CondensedPrediction(lay, phi_con, psi, theta, gamma, xi_vol, xi_rain)


def affine_row_std(var_map_x0: np.ndarray, var_map_w: np.ndarray,
                   var_x0: np.ndarray, var_w: np.ndarray) -> float | np.ndarray:
    """Standard deviation of predicted rows given their variance-map rows.

    Decision variables carry no variance, so only the (x0, w) blocks enter.
    Works for single rows (1-d) and stacked matrices (2-d) alike.
    """
    var = var_map_x0 @ var_x0 + var_map_w @ var_w
    return np.sqrt(np.maximum(var, 0.0))


def predict_volume_stats(pred: CondensedPrediction, q_u: np.ndarray,
                         x0_mean: np.ndarray, x0_var: np.ndarray,
                         w_mean: np.ndarray, w_var: np.ndarray,
                         q_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stacked mean and standard deviation of all predicted tank volumes."""
    mean = (pred.phi_con @ q_u + pred.psi @ x0_mean + pred.theta @ w_mean
            + pred.gamma @ q_w)
    std = affine_row_std(pred.xi_vol, pred.xi_rain, x0_var, w_var)
    return mean, std

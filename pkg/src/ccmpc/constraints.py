"""Constraint and cost assembly for the drainage MPC problem.

Decision vector layout (fixed): x = [q_u | q_w | s | c] where

* ``q_u`` are throttle flows of controlled tanks (tank-major, steps inner),
* ``q_w`` are planned weir flows, one per tank and step,
* ``s``   softens probabilistic lower rows exactly up to their tightening,
* ``c``   relaxes the avoid-overflow rows at a cost (no upper bound).

Deterministic mode carries no ``s``/``c`` blocks.  Every row is stored as

    a_dec . x + omega_vol . x0 + omega_rain . w  <=  rhs_base  (+/- sigma z)

where sigma is the standard deviation of the row's uncertain part, obtained
from the variance-map matrices ``xi_vol``/``xi_rain`` applied to the
input variances.  ``tighten_sign`` is -1 for probabilistic rows (margin
subtracted), +1 for slack upper bounds (allowance added) and 0 otherwise,
so the solve-time right-hand side is

    b = rhs_base - omega_vol @ x0_mean - omega_rain @ w_mean
        + tighten_sign * sigma * z(gamma).

Row ordering is fixed: tanks in topological order, steps inner, with the
per-(tank, step) row bundle emitted in a documented order.  This keeps
assembled matrices reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .network import NetworkSpec, ordered_tanks
from .prediction import CondensedPrediction, affine_row_std

KIND_EXPECTATION = "expectation"
KIND_PROBABILISTIC = "probabilistic"

TAG_TANK_LOWER = "tank_lower"
TAG_TANK_UPPER_AVOID = "tank_upper_avoid"
TAG_TANK_UPPER_EXPECTED = "tank_upper_expected"
TAG_CONTROL_PIPE_MAX = "control_pipe_max"
TAG_CONTROL_BERNOULLI = "control_bernoulli"
TAG_SLACK_BOUND_S = "slack_bound_s"
TAG_SLACK_BOUND_C = "slack_bound_c"
TAG_NONNEGATIVITY = "nonnegativity"

MODE_DETERMINISTIC = "deterministic"
MODE_CHANCE = "chance"


# ---------------------------------------------------------------------------
# Standard-normal quantile
# ---------------------------------------------------------------------------

def std_normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF on the open interval (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile argument must be in (0, 1), got {p}")
    return float(norm.ppf(p))


def tightening_quantile(gamma: float) -> float:
    """Margin multiplier z(gamma) used to tighten probabilistic rows.

    gamma = 0.5 gives z = 0 (no margin); gamma = 1.0 is capped at z = 3.0,
    i.e. certainty is approximated by a three-sigma margin.
    """
    if not 0.5 <= gamma <= 1.0:
        raise ValueError(f"confidence level must be in [0.5, 1], got {gamma}")
    if gamma == 1.0:
        return 3.0
    if gamma == 0.5:
        return 0.0
    return std_normal_quantile(gamma)


# ---------------------------------------------------------------------------
# Constraint system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintSystem:
    """Stacked inequality system over the decision vector [q_u|q_w|s|c].

    Invariants:
    * kind == expectation and tag != slack_bound_s  =>  tighten_sign == 0
    * kind == probabilistic                         =>  tighten_sign == -1
    * xi_vol/xi_rain rows are the variance maps of the row's uncertain part
      (the referenced volume's variance-map row scaled by its coefficient
      squared), so sigma = sqrt(xi_vol @ var_x0 + xi_rain @ var_w).
    """

    mode: str
    horizon: int
    tank_ids: tuple[str, ...]
    omega_con: np.ndarray
    omega_weir: np.ndarray
    omega_s: np.ndarray
    omega_c: np.ndarray
    omega_vol: np.ndarray
    omega_rain: np.ndarray
    rhs_base: np.ndarray
    xi_vol: np.ndarray
    xi_rain: np.ndarray
    tighten_sign: np.ndarray
    kind: tuple[str, ...]
    tag: tuple[str, ...]
    row_tank: tuple[str, ...]
    row_step: tuple[int, ...]

    @property
    def n_rows(self) -> int:
        return self.rhs_base.shape[0]

    @property
    def n_q_u(self) -> int:
        return self.omega_con.shape[1]

    @property
    def n_q_w(self) -> int:
        return self.omega_weir.shape[1]

    @property
    def n_s(self) -> int:
        return self.omega_s.shape[1]

    @property
    def n_c(self) -> int:
        return self.omega_c.shape[1]

    @property
    def n_dec(self) -> int:
        return self.n_q_u + self.n_q_w + self.n_s + self.n_c

    def decision_matrix(self) -> np.ndarray:
        """Full inequality matrix over [q_u | q_w | s | c]."""
        return np.hstack([self.omega_con, self.omega_weir,
                          self.omega_s, self.omega_c])

    def slack_index(self, tank_id: str, step: int) -> int:
        return self.tank_ids.index(tank_id) * self.horizon + step


def row_std(system: ConstraintSystem, var_x0: np.ndarray,
            var_w: np.ndarray) -> np.ndarray:
    """Per-row standard deviation of the uncertain part."""
    return np.asarray(affine_row_std(system.xi_vol, system.xi_rain,
                                     np.asarray(var_x0, dtype=float),
                                     np.asarray(var_w, dtype=float)))


def tightening_offsets(system: ConstraintSystem, var_x0: np.ndarray,
                       var_w: np.ndarray, gamma: float) -> np.ndarray:
    """Per-row margin magnitude sigma*z; zero wherever no margin applies.

    A row whose offset is zero carries no chance content at the current
    moments: probabilistic rows reduce to their expectation reading and
    slack bounds pin their slack to zero.
    """
    z = tightening_quantile(gamma) if system.mode == MODE_CHANCE else 0.0
    if z == 0.0:
        return np.zeros(system.n_rows)
    sigma = row_std(system, var_x0, var_w)
    return np.where(system.tighten_sign != 0, sigma * z, 0.0)


def tightened_rhs(system: ConstraintSystem, x0_mean: np.ndarray,
                  var_x0: np.ndarray, w_mean: np.ndarray,
                  var_w: np.ndarray, gamma: float,
                  offsets: np.ndarray | None = None) -> np.ndarray:
    """Solve-time right-hand side: known terms moved over, margins applied."""
    if offsets is None:
        offsets = tightening_offsets(system, var_x0, var_w, gamma)
    return (system.rhs_base
            - system.omega_vol @ np.asarray(x0_mean, dtype=float)
            - system.omega_rain @ np.asarray(w_mean, dtype=float)
            + system.tighten_sign * offsets)


class _RowBuilder:
    def __init__(self, pred: CondensedPrediction, mode: str):
        lay = pred.layout
        self.pred = pred
        self.mode = mode
        self.lay = lay
        self.n_slack = lay.n_tanks * lay.horizon if mode == MODE_CHANCE else 0
        self.a_con: list[np.ndarray] = []
        self.a_weir: list[np.ndarray] = []
        self.a_s: list[np.ndarray] = []
        self.a_c: list[np.ndarray] = []
        self.a_vol: list[np.ndarray] = []
        self.a_rain: list[np.ndarray] = []
        self.rhs: list[float] = []
        self.xi_vol: list[np.ndarray] = []
        self.xi_rain: list[np.ndarray] = []
        self.sign: list[int] = []
        self.kind: list[str] = []
        self.tag: list[str] = []
        self.row_tank: list[str] = []
        self.row_step: list[int] = []

    def slack_basis(self, tank_id: str, step: int) -> np.ndarray:
        row = np.zeros(self.n_slack)
        if self.n_slack:
            row[self.lay.tank_ids.index(tank_id) * self.lay.horizon + step] = 1.0
        return row

    def add(self, *, con, weir, s, c, vol, rain, rhs, xi_vol=None, xi_rain=None,
            sign=0, kind=KIND_EXPECTATION, tag, tank="", step=-1):
        lay = self.lay
        self.a_con.append(con if con is not None else np.zeros(lay.n_q_u))
        self.a_weir.append(weir if weir is not None else np.zeros(lay.n_q_w))
        self.a_s.append(s if s is not None else np.zeros(self.n_slack))
        self.a_c.append(c if c is not None else np.zeros(self.n_slack))
        self.a_vol.append(vol if vol is not None else np.zeros(lay.n_x0))
        self.a_rain.append(rain if rain is not None else np.zeros(lay.n_w))
        self.rhs.append(float(rhs))
        self.xi_vol.append(xi_vol if xi_vol is not None else np.zeros(lay.n_x0))
        self.xi_rain.append(xi_rain if xi_rain is not None else np.zeros(lay.n_w))
        self.sign.append(sign)
        self.kind.append(kind)
        self.tag.append(tag)
        self.row_tank.append(tank)
        self.row_step.append(step)

    def finish(self) -> ConstraintSystem:
        lay = self.lay

        def stack(rows, width):
            if rows:
                return np.array(rows, dtype=float)
            return np.zeros((0, width))

        system = ConstraintSystem(
            mode=self.mode,
            horizon=lay.horizon,
            tank_ids=lay.tank_ids,
            omega_con=stack(self.a_con, lay.n_q_u),
            omega_weir=stack(self.a_weir, lay.n_q_w),
            omega_s=stack(self.a_s, self.n_slack),
            omega_c=stack(self.a_c, self.n_slack),
            omega_vol=stack(self.a_vol, lay.n_x0),
            omega_rain=stack(self.a_rain, lay.n_w),
            rhs_base=np.array(self.rhs, dtype=float),
            xi_vol=stack(self.xi_vol, lay.n_x0),
            xi_rain=stack(self.xi_rain, lay.n_w),
            tighten_sign=np.array(self.sign, dtype=float),
            kind=tuple(self.kind),
            tag=tuple(self.tag),
            row_tank=tuple(self.row_tank),
            row_step=tuple(self.row_step),
        )
        for m in (system.omega_con, system.omega_weir, system.omega_s,
                  system.omega_c, system.omega_vol, system.omega_rain,
                  system.rhs_base, system.xi_vol, system.xi_rain,
                  system.tighten_sign):
            m.setflags(write=False)
        return system


def _q_u_basis(lay, tank_id: str, step: int) -> np.ndarray:
    row = np.zeros(lay.n_q_u)
    row[lay.q_u_index(tank_id, step)] = 1.0
    return row


def _q_w_basis(lay, tank_id: str, step: int) -> np.ndarray:
    row = np.zeros(lay.n_q_w)
    row[lay.q_w_index(tank_id, step)] = 1.0
    return row


def assemble_deterministic(pred: CondensedPrediction,
                           spec: NetworkSpec) -> ConstraintSystem:
    """Expectation-only constraint system (no margins, no slack variables).

    Per tank and step: volume lower and upper rows, weir nonnegativity; for
    controlled tanks additionally the throttle bounds and the release limit
    q_u <= beta V (which keeps the volume update nonnegative).
    """
    b = _RowBuilder(pred, MODE_DETERMINISTIC)
    lay = pred.layout
    for tank in ordered_tanks(spec):
        for k in range(lay.horizon):
            con, vol, rain, weir = pred.volume_row(tank.id, k + 1)
            b.add(con=-con, weir=-weir, s=None, c=None, vol=-vol, rain=-rain,
                  rhs=0.0, tag=TAG_TANK_LOWER, tank=tank.id, step=k)
            b.add(con=con, weir=weir, s=None, c=None, vol=vol, rain=rain,
                  rhs=tank.v_max_m3, tag=TAG_TANK_UPPER_EXPECTED,
                  tank=tank.id, step=k)
            if tank.kind == "controlled":
                qu = _q_u_basis(lay, tank.id, k)
                b.add(con=-qu, weir=None, s=None, c=None, vol=None, rain=None,
                      rhs=0.0, tag=TAG_NONNEGATIVITY, tank=tank.id, step=k)
                b.add(con=qu, weir=None, s=None, c=None, vol=None, rain=None,
                      rhs=tank.q_u_max_m3s, tag=TAG_CONTROL_PIPE_MAX,
                      tank=tank.id, step=k)
                vcon, vvol, vrain, vweir = pred.volume_row(tank.id, k)
                beta = tank.beta_per_s
                b.add(con=qu - beta * vcon, weir=-beta * vweir, s=None, c=None,
                      vol=-beta * vvol, rain=-beta * vrain, rhs=0.0,
                      tag=TAG_CONTROL_BERNOULLI, tank=tank.id, step=k)
            b.add(con=None, weir=-_q_w_basis(lay, tank.id, k), s=None, c=None,
                  vol=None, rain=None, rhs=0.0, tag=TAG_NONNEGATIVITY,
                  tank=tank.id, step=k)
    return b.finish()


def assemble_chance(pred: CondensedPrediction,
                    spec: NetworkSpec) -> ConstraintSystem:
    """Chance-constrained system with margin bookkeeping and slack columns.

    Passive tanks get a probabilistic lower row (softened by s up to its own
    margin) and a margin-tightened avoid-overflow row (relaxed by c at a
    cost); controlled tanks keep an expectation lower row - their release
    limit q_u <= beta V already guards emptying, so only that row carries a
    margin and its slack.  The expected upper row stays hard in both cases.
    """
    b = _RowBuilder(pred, MODE_CHANCE)
    lay = pred.layout
    dt = spec.delta_t_s
    for tank in ordered_tanks(spec):
        beta = tank.beta_per_s
        for k in range(lay.horizon):
            con, vol, rain, weir = pred.volume_row(tank.id, k + 1)
            xiv, xir = pred.volume_variance_row(tank.id, k + 1)
            s_col = b.slack_basis(tank.id, k)
            c_col = b.slack_basis(tank.id, k)

            if tank.kind == "passive":
                # Lower volume row, probabilistic: stay above the margin
                # unless s cancels it (s is bounded by exactly that margin).
                b.add(con=-con, weir=-weir, s=-s_col, c=None, vol=-vol,
                      rain=-rain, rhs=0.0, xi_vol=xiv, xi_rain=xir, sign=-1,
                      kind=KIND_PROBABILISTIC, tag=TAG_TANK_LOWER,
                      tank=tank.id, step=k)
                b.add(con=None, weir=None, s=s_col, c=None, vol=None,
                      rain=None, rhs=0.0, xi_vol=xiv, xi_rain=xir, sign=+1,
                      tag=TAG_SLACK_BOUND_S, tank=tank.id, step=k)
            else:
                # Controlled tanks: expectation lower row only.  The release
                # limit below already keeps the update nonnegative, so a
                # probabilistic lower row would only couple the two slacks.
                b.add(con=-con, weir=-weir, s=None, c=None, vol=-vol,
                      rain=-rain, rhs=0.0, tag=TAG_TANK_LOWER,
                      tank=tank.id, step=k)

            # Avoid-overflow row: the volume reached *without* using the own
            # weir must stay below capacity minus the margin, softened by c.
            own_weir = _q_w_basis(lay, tank.id, k)
            b.add(con=con, weir=weir + dt * own_weir, s=None, c=-c_col,
                  vol=vol, rain=rain, rhs=tank.v_max_m3, xi_vol=xiv,
                  xi_rain=xir, sign=-1, kind=KIND_PROBABILISTIC,
                  tag=TAG_TANK_UPPER_AVOID, tank=tank.id, step=k)

            # Expected volume stays physically feasible (weir included).
            b.add(con=con, weir=weir, s=None, c=None, vol=vol, rain=rain,
                  rhs=tank.v_max_m3, tag=TAG_TANK_UPPER_EXPECTED,
                  tank=tank.id, step=k)

            if tank.kind == "controlled":
                qu = _q_u_basis(lay, tank.id, k)
                b.add(con=-qu, weir=None, s=None, c=None, vol=None, rain=None,
                      rhs=0.0, tag=TAG_NONNEGATIVITY, tank=tank.id, step=k)
                b.add(con=qu, weir=None, s=None, c=None, vol=None, rain=None,
                      rhs=tank.q_u_max_m3s, tag=TAG_CONTROL_PIPE_MAX,
                      tank=tank.id, step=k)
                # Release limit against the *current* volume, tightened by
                # beta sigma{V_k} and softened by s up to exactly that margin.
                vcon, vvol, vrain, vweir = pred.volume_row(tank.id, k)
                kxiv, kxir = pred.volume_variance_row(tank.id, k)
                b.add(con=qu - beta * vcon, weir=-beta * vweir, s=-s_col,
                      c=None, vol=-beta * vvol, rain=-beta * vrain, rhs=0.0,
                      xi_vol=beta * beta * kxiv, xi_rain=beta * beta * kxir,
                      sign=-1, kind=KIND_PROBABILISTIC,
                      tag=TAG_CONTROL_BERNOULLI, tank=tank.id, step=k)
                b.add(con=None, weir=None, s=s_col, c=None, vol=None,
                      rain=None, rhs=0.0, xi_vol=beta * beta * kxiv,
                      xi_rain=beta * beta * kxir, sign=+1,
                      tag=TAG_SLACK_BOUND_S, tank=tank.id, step=k)

            b.add(con=None, weir=-own_weir, s=None, c=None, vol=None,
                  rain=None, rhs=0.0, tag=TAG_NONNEGATIVITY,
                  tank=tank.id, step=k)
            b.add(con=None, weir=None, s=-s_col, c=None, vol=None, rain=None,
                  rhs=0.0, tag=TAG_NONNEGATIVITY, tank=tank.id, step=k)
            b.add(con=None, weir=None, s=None, c=-c_col, vol=None, rain=None,
                  rhs=0.0, tag=TAG_NONNEGATIVITY, tank=tank.id, step=k)
    return b.finish()


# ---------------------------------------------------------------------------
# Decoupling audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecouplingReport:
    ok: bool
    violations: tuple[str, ...]


def verify_decoupling(system: ConstraintSystem,
                      spec: NetworkSpec) -> DecouplingReport:
    """Check that controlled-tank lower rows carry no margin and no slack.

    If a controlled tank's lower volume row were probabilistic and softened
    by s, that slack would couple with the avoid-overflow slack c (a large
    lower margin forces c active through the shared volume rows).  The
    assembly avoids this by keeping those rows expectation-only; this audit
    proves it for any given system, including hand-built ones.
    """
    controlled = {t.id for t in spec.tanks if t.kind == "controlled"}
    violations: list[str] = []
    for i in range(system.n_rows):
        if system.tag[i] != TAG_TANK_LOWER or system.row_tank[i] not in controlled:
            continue
        where = f"row {i} (tank {system.row_tank[i]}, step {system.row_step[i]})"
        if system.kind[i] != KIND_EXPECTATION:
            violations.append(f"{where}: lower row is {system.kind[i]}")
        if system.tighten_sign[i] != 0:
            violations.append(f"{where}: lower row carries a margin")
        if system.n_s and np.any(system.omega_s[i] != 0.0):
            violations.append(f"{where}: lower row uses slack s")
        if system.n_c and np.any(system.omega_c[i] != 0.0):
            violations.append(f"{where}: lower row uses slack c")
    return DecouplingReport(ok=not violations, violations=tuple(violations))


# ---------------------------------------------------------------------------
# Cost assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostWeights:
    """Objective weights; defaults give overflow avoidance top priority."""

    roughness: float = 0.01
    spill_flow_priority: float = 2.0
    wwtp_flow_priority: float = -1.0
    slack_lower: float = 10.0
    slack_upper: float = 10.0


@dataclass(frozen=True)
class CostModel:
    """Quadratic cost 0.5 x'Hx + g'x + const over [q_u | q_w | s | c].

    Only the roughness part depends on the previous control, and only the
    constant depends on the state/forecast means, so H and the static part
    of g are reusable across controller steps.
    """

    n_q_u: int
    n_dec: int
    horizon: int
    controlled_ids: tuple[str, ...]
    roughness: float
    h_matrix: np.ndarray
    g_static: np.ndarray
    q_z: np.ndarray  # weights on the stacked predicted volumes z
    psi: np.ndarray
    theta: np.ndarray

    def gradient(self, previous_q_u: np.ndarray) -> np.ndarray:
        g = self.g_static.copy()
        n = self.horizon
        for i, _ in enumerate(self.controlled_ids):
            g[i * n] -= 2.0 * self.roughness * previous_q_u[i]
        return g

    def constant(self, previous_q_u: np.ndarray, x0_mean: np.ndarray,
                 w_mean: np.ndarray) -> float:
        shift = float(self.q_z @ (self.psi @ x0_mean + self.theta @ w_mean))
        return shift + self.roughness * float(previous_q_u @ previous_q_u)

    def objective_value(self, x: np.ndarray, previous_q_u: np.ndarray,
                        x0_mean: np.ndarray, w_mean: np.ndarray) -> float:
        g = self.gradient(previous_q_u)
        return (0.5 * float(x @ (self.h_matrix @ x)) + float(g @ x)
                + self.constant(previous_q_u, x0_mean, w_mean))


def build_cost(pred: CondensedPrediction, spec: NetworkSpec,
               weights: CostWeights, with_slack: bool) -> CostModel:
    """Assemble the horizon cost.

    Terms: flow roughness ||dq_u||^2 (weight ``roughness``), priority on
    predicted flows (positive on planned weir flows, negative on the flow
    into the treatment plant), per-tank accumulated overflow volume weights,
    and linear slack penalties in chance mode.
    """
    lay = pred.layout
    n = lay.horizon
    dt = spec.delta_t_s
    n_slack = lay.n_tanks * n if with_slack else 0
    n_dec = lay.n_q_u + lay.n_q_w + 2 * n_slack

    # Roughness: for each controlled tank, dq_k = q_k - q_{k-1} with the
    # previous applied control ahead of the block.
    diff = np.eye(n) - np.eye(n, k=-1)
    block = 2.0 * weights.roughness * (diff.T @ diff)
    h_matrix = np.zeros((n_dec, n_dec))
    for i in range(lay.n_controlled):
        sl = slice(i * n, (i + 1) * n)
        h_matrix[sl, sl] = block

    # Priorities on predicted flows, expressed over the stacked volumes z
    # where needed (a passive sink's outflow is beta times its volume).
    q_z = np.zeros(lay.n_tanks * n)
    sink = spec.tank(spec.wwtp_sink)
    if sink.kind == "passive":
        for k in range(1, n + 1):
            q_z[lay.z_index(sink.id, k)] += weights.wwtp_flow_priority * sink.beta_per_s

    g = np.zeros(n_dec)
    g[:lay.n_q_u] += pred.phi_con.T @ q_z
    off_qw = lay.n_q_u
    g[off_qw:off_qw + lay.n_q_w] += pred.gamma.T @ q_z
    if sink.kind == "controlled":
        for k in range(n):
            g[lay.q_u_index(sink.id, k)] += weights.wwtp_flow_priority

    for tank in ordered_tanks(spec):
        for k in range(n):
            j = off_qw + lay.q_w_index(tank.id, k)
            g[j] += weights.spill_flow_priority
            # Accumulated overflow volume: a weir flow at step k adds
            # dt * q_w to the running volume of steps k..N-1.
            g[j] += tank.overflow_weight * dt * (n - k)

    if with_slack:
        off_s = lay.n_q_u + lay.n_q_w
        g[off_s:off_s + n_slack] += weights.slack_lower
        g[off_s + n_slack:] += weights.slack_upper

    return CostModel(
        n_q_u=lay.n_q_u,
        n_dec=n_dec,
        horizon=n,
        controlled_ids=lay.controlled_ids,
        roughness=weights.roughness,
        h_matrix=h_matrix,
        g_static=g,
        q_z=q_z,
        psi=pred.psi,
        theta=pred.theta,
    )


# ---------------------------------------------------------------------------
# Debug dump
# ---------------------------------------------------------------------------

def dump_system(system: ConstraintSystem, path) -> None:
    """Write the system in a coordinate text format for external checking."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"%%ccmpc constraint system mode={system.mode} "
                 f"rows={system.n_rows} dec={system.n_dec}\n")
        blocks = [("con", system.omega_con), ("weir", system.omega_weir),
                  ("s", system.omega_s), ("c", system.omega_c),
                  ("vol", system.omega_vol), ("rain", system.omega_rain),
                  ("xi_vol", system.xi_vol), ("xi_rain", system.xi_rain)]
        for name, mat in blocks:
            rows, cols = np.nonzero(mat)
            fh.write(f"%block {name} {mat.shape[0]} {mat.shape[1]} {rows.size}\n")
            for r, c in zip(rows, cols):
                fh.write(f"{name} {r} {c} {mat[r, c]!r}\n")
        for i in range(system.n_rows):
            fh.write(f"row {i} kind={system.kind[i]} tag={system.tag[i]} "
                     f"tank={system.row_tank[i]} step={system.row_step[i]} "
                     f"rhs={system.rhs_base[i]!r} sign={int(system.tighten_sign[i])}\n")

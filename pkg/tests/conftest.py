"""Shared fixtures, generators and independent oracles for the test suite.

Oracle policy: anything the library computes through stacked matrices or
library-special code paths is re-derived here through a different route --
per-element recursions for predicted moments, bisection on the error
function for normal quantiles, brute-force active-set enumeration for QPs,
hand arithmetic for costs and KPIs -- so agreement between the two routes
is meaningful evidence and not a tautology.
"""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from ccmpc import bundled_network_text, bundled_scenario_text
from ccmpc.network import (
    NetworkSpec,
    ordered_delays,
    ordered_tanks,
    parse_network,
)
from ccmpc.prediction import (
    condense,
    step_controlled_tank,
    step_delay,
    step_passive_tank,
)
from ccmpc.simulation import parse_scenario


# ---------------------------------------------------------------------------
# Bundled configs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def astlingen() -> NetworkSpec:
    return parse_network(bundled_network_text())


@pytest.fixture(scope="session")
def storm():
    return parse_scenario(bundled_scenario_text())


# ---------------------------------------------------------------------------
# Small hand-made networks
# ---------------------------------------------------------------------------

def single_controlled_doc() -> dict:
    """One controlled tank fed by one runoff input; the tank is the sink."""
    return {
        "delta_t_s": 300.0,
        "tanks": [{
            "id": "C1",
            "kind": "controlled",
            "v_max_m3": 500.0,
            "beta_per_s": 1.0 / 1200.0,
            "q_u_max_m3s": 0.4,
            "overflow_weight": 1000.0,
            "receiving_water": "river",
        }],
        "delays": [],
        "inflows": {"C1": ["w1"]},
        "runoff_inputs": ["w1"],
        "wwtp_sink": "C1",
        "pipe_csos": [],
    }


def single_passive_doc() -> dict:
    """One passive tank fed by one runoff input; the tank is the sink."""
    return {
        "delta_t_s": 300.0,
        "tanks": [{
            "id": "P1",
            "kind": "passive",
            "v_max_m3": 800.0,
            "beta_per_s": 1.0 / 1500.0,
            "overflow_weight": 1000.0,
            "receiving_water": "river",
        }],
        "delays": [],
        "inflows": {"P1": ["w1"]},
        "runoff_inputs": ["w1"],
        "wwtp_sink": "P1",
        "pipe_csos": [],
    }


def two_tank_doc() -> dict:
    """Controlled tank feeding a passive sink through a two-step delay.

    A second runoff input reaches the sink directly and the first one is
    capacity-limited by a pipe, which exercises every element kind at once.
    """
    return {
        "delta_t_s": 300.0,
        "tanks": [
            {"id": "C1", "kind": "controlled", "v_max_m3": 400.0,
             "beta_per_s": 1.0 / 1000.0, "q_u_max_m3s": 0.3,
             "overflow_weight": 5000.0, "receiving_water": "creek"},
            {"id": "P1", "kind": "passive", "v_max_m3": 900.0,
             "beta_per_s": 1.0 / 1500.0, "overflow_weight": 1000.0,
             "receiving_water": "river"},
        ],
        "delays": [{"id": "n1", "steps": 2}],
        "inflows": {"C1": ["w1"], "n1": ["C1"], "P1": ["n1", "w2"]},
        "runoff_inputs": ["w1", "w2"],
        "wwtp_sink": "P1",
        "pipe_csos": [{"id": "PC1", "carries": "w1", "capacity_m3s": 0.5,
                       "receiving_water": "creek"}],
    }


def spec_from_doc(doc: dict) -> NetworkSpec:
    return parse_network(json.dumps(doc))


@pytest.fixture(scope="session")
def single_controlled() -> NetworkSpec:
    return spec_from_doc(single_controlled_doc())


@pytest.fixture(scope="session")
def single_passive() -> NetworkSpec:
    return spec_from_doc(single_passive_doc())


@pytest.fixture(scope="session")
def two_tank() -> NetworkSpec:
    return spec_from_doc(two_tank_doc())


def steady_scenario_doc(name: str, n_steps: int, dry: float = 0.02,
                        delta_t_s: float = 300.0) -> dict:
    return {"name": name, "delta_t_s": delta_t_s, "n_steps": n_steps,
            "dry_weather_m3s": dry, "storms": []}


# ---------------------------------------------------------------------------
# Random valid networks
# ---------------------------------------------------------------------------

def make_random_network(rng: np.random.Generator) -> NetworkSpec:
    """Random acyclic network that satisfies every config validation rule.

    Storage elements are declared in a random interleaving and each one
    draws its sources from strictly earlier elements, so the graph is a DAG
    by construction; leftover runoff inputs are attached afterwards.
    """
    dt = float(rng.choice([60.0, 300.0, 600.0]))
    n_runoff = int(rng.integers(1, 4))
    n_tanks = int(rng.integers(1, 5))
    n_delays = int(rng.integers(0, 4))

    runoff = [f"w{i + 1}" for i in range(n_runoff)]
    kinds = ["tank"] * n_tanks + ["delay"] * n_delays
    rng.shuffle(kinds)

    tanks: list[dict] = []
    delays: list[dict] = []
    inflows: dict[str, list[str]] = {}
    available = list(runoff)
    tank_count = delay_count = 0
    for kind in kinds:
        if kind == "tank":
            tank_count += 1
            eid = f"T{tank_count}"
            controlled = bool(rng.random() < 0.5)
            entry = {
                "id": eid,
                "kind": "controlled" if controlled else "passive",
                "v_max_m3": float(rng.uniform(200.0, 2000.0)),
                "beta_per_s": float(rng.uniform(0.1, 0.9)) / dt,
                "overflow_weight": float(rng.choice([0.0, 100.0, 5000.0])),
                "receiving_water": str(rng.choice(["river", "creek"])),
            }
            if controlled:
                entry["q_u_max_m3s"] = float(rng.uniform(0.05, 0.5))
            tanks.append(entry)
        else:
            delay_count += 1
            eid = f"n{delay_count}"
            delays.append({"id": eid, "steps": int(rng.integers(1, 4))})
        n_src = int(rng.integers(1, min(3, len(available)) + 1))
        picks = rng.choice(len(available), size=n_src, replace=False)
        inflows[eid] = [available[i] for i in sorted(picks)]
        available.append(eid)

    # Every runoff input must feed something; attach leftovers anywhere.
    fed = {src for sources in inflows.values() for src in sources}
    storage_ids = list(inflows)
    for rid in runoff:
        if rid in fed:
            continue
        target = storage_ids[int(rng.integers(0, len(storage_ids)))]
        inflows[target].append(rid)

    pipes = []
    for rid in runoff:
        if rng.random() < 0.3:
            pipes.append({"id": f"P_{rid}", "carries": rid,
                          "capacity_m3s": float(rng.uniform(0.2, 1.0)),
                          "receiving_water": str(rng.choice(["river", "creek"]))})

    sink = tanks[int(rng.integers(0, len(tanks)))]["id"]
    doc = {
        "delta_t_s": dt,
        "tanks": tanks,
        "delays": delays,
        "inflows": inflows,
        "runoff_inputs": runoff,
        "wwtp_sink": sink,
        "pipe_csos": pipes,
    }
    return spec_from_doc(doc)


# ---------------------------------------------------------------------------
# Prediction oracle: per-element recursion
# ---------------------------------------------------------------------------

def random_prediction_inputs(spec: NetworkSpec, horizon: int,
                             rng: np.random.Generator) -> dict:
    """Random dict-keyed moment/decision inputs for a prediction oracle run."""
    x0_mean: dict = {}
    x0_var: dict = {}
    for t in ordered_tanks(spec):
        x0_mean[t.id] = float(rng.uniform(0.0, 0.5) * t.v_max_m3)
        x0_var[t.id] = float(rng.uniform(0.0, 30.0))
    for d in ordered_delays(spec):
        x0_mean[d.id] = rng.uniform(0.0, 0.5, d.steps)
        x0_var[d.id] = rng.uniform(0.0, 0.01, d.steps)
    w_mean = {rid: rng.uniform(0.0, 1.0, horizon) for rid in spec.runoff_inputs}
    w_var = {rid: rng.uniform(0.0, 0.04, horizon) for rid in spec.runoff_inputs}
    q_u = {t.id: rng.uniform(0.0, t.q_u_max_m3s, horizon)
           for t in ordered_tanks(spec) if t.kind == "controlled"}
    q_w = {t.id: rng.uniform(0.0, 0.05, horizon) for t in ordered_tanks(spec)}
    return {"x0_mean": x0_mean, "x0_var": x0_var, "w_mean": w_mean,
            "w_var": w_var, "q_u": q_u, "q_w": q_w}


def recursion_predict(spec: NetworkSpec, horizon: int, x0_mean: dict,
                      x0_var: dict, w_mean: dict, w_var: dict,
                      q_u: dict, q_w: dict) -> tuple[np.ndarray, np.ndarray]:
    """Predicted tank-volume moments by stepping the element recursions.

    All arguments are plain dicts keyed by element id (delay entries are
    oldest-first arrays, per-step entries are length-``horizon`` arrays).
    Returns (mean, var) with shape (n_tanks, horizon) in topological tank
    order for steps 1..horizon -- the layout of the stacked prediction.
    """
    tanks = ordered_tanks(spec)
    delays = ordered_delays(spec)
    inflow = spec.inflow_map()
    all_ids = spec.tank_ids + spec.delay_ids + spec.runoff_inputs
    split = {eid: spec.split_factor(eid) for eid in all_ids}
    dt = spec.delta_t_s

    vol_m = {t.id: float(x0_mean[t.id]) for t in tanks}
    vol_v = {t.id: float(x0_var[t.id]) for t in tanks}
    buf_m = {d.id: np.asarray(x0_mean[d.id], dtype=float).copy() for d in delays}
    buf_v = {d.id: np.asarray(x0_var[d.id], dtype=float).copy() for d in delays}

    mean = np.zeros((len(tanks), horizon))
    var = np.zeros((len(tanks), horizon))
    for k in range(horizon):
        # Every element's outflow during step k depends only on the current
        # state, so all outflows can be formed before any update.
        out_m: dict[str, float] = {}
        out_v: dict[str, float] = {}
        for rid in spec.runoff_inputs:
            out_m[rid] = float(w_mean[rid][k])
            out_v[rid] = float(w_var[rid][k])
        for t in tanks:
            if t.kind == "passive":
                out_m[t.id] = t.beta_per_s * vol_m[t.id]
                out_v[t.id] = t.beta_per_s ** 2 * vol_v[t.id]
            else:
                out_m[t.id] = float(q_u[t.id][k])
                out_v[t.id] = 0.0
        for d in delays:
            out_m[d.id] = float(buf_m[d.id][0])
            out_v[d.id] = float(buf_v[d.id][0])

        in_m = {eid: sum(split[s] * out_m[s] for s in inflow.get(eid, ()))
                for eid in spec.tank_ids + spec.delay_ids}
        in_v = {eid: sum(split[s] ** 2 * out_v[s] for s in inflow.get(eid, ()))
                for eid in spec.tank_ids + spec.delay_ids}

        for i, t in enumerate(tanks):
            if t.kind == "passive":
                m2, v2, _, _ = step_passive_tank(
                    vol_m[t.id], vol_v[t.id], in_m[t.id], in_v[t.id],
                    float(q_w[t.id][k]), t.beta_per_s, dt)
            else:
                m2, v2, _, _ = step_controlled_tank(
                    vol_m[t.id], vol_v[t.id], in_m[t.id], in_v[t.id],
                    float(q_u[t.id][k]), float(q_w[t.id][k]), dt)
            vol_m[t.id], vol_v[t.id] = m2, v2
            mean[i, k], var[i, k] = m2, v2
        for d in delays:
            _, _, buf_m[d.id], buf_v[d.id] = step_delay(
                in_m[d.id], in_v[d.id], buf_m[d.id], buf_v[d.id])
    return mean, var


def stack_prediction_inputs(spec: NetworkSpec, horizon: int, x0_mean: dict,
                            x0_var: dict, w_mean: dict, w_var: dict,
                            q_u: dict, q_w: dict):
    """Flatten dict-keyed oracle inputs into the stacked vector layout."""
    lay = condense(spec, horizon).layout
    q_u_vec = np.zeros(lay.n_q_u)
    for tid in lay.controlled_ids:
        for k in range(horizon):
            q_u_vec[lay.q_u_index(tid, k)] = q_u[tid][k]
    q_w_vec = np.zeros(lay.n_q_w)
    for tid in lay.tank_ids:
        for k in range(horizon):
            q_w_vec[lay.q_w_index(tid, k)] = q_w[tid][k]
    x0_mean_vec = np.zeros(lay.n_x0)
    x0_var_vec = np.zeros(lay.n_x0)
    for tid in lay.tank_ids:
        x0_mean_vec[lay.x0_tank_index(tid)] = x0_mean[tid]
        x0_var_vec[lay.x0_tank_index(tid)] = x0_var[tid]
    for did in lay.delay_ids:
        sl = lay.x0_delay_slice(did)
        x0_mean_vec[sl] = x0_mean[did]
        x0_var_vec[sl] = x0_var[did]
    w_mean_vec = np.zeros(lay.n_w)
    w_var_vec = np.zeros(lay.n_w)
    for rid in lay.runoff_ids:
        for k in range(horizon):
            w_mean_vec[lay.w_index(rid, k)] = w_mean[rid][k]
            w_var_vec[lay.w_index(rid, k)] = w_var[rid][k]
    return q_u_vec, x0_mean_vec, x0_var_vec, w_mean_vec, w_var_vec, q_w_vec


def stacked_predict(spec: NetworkSpec, horizon: int, x0_mean: dict,
                    x0_var: dict, w_mean: dict, w_var: dict,
                    q_u: dict, q_w: dict) -> tuple[np.ndarray, np.ndarray]:
    """Same prediction through the condensed matrices, reshaped like the oracle."""
    pred = condense(spec, horizon)
    lay = pred.layout
    q_u_vec, x0_m, x0_v, w_m, w_v, q_w_vec = stack_prediction_inputs(
        spec, horizon, x0_mean, x0_var, w_mean, w_var, q_u, q_w)
    mean = (pred.phi_con @ q_u_vec + pred.psi @ x0_m + pred.theta @ w_m
            + pred.gamma @ q_w_vec)
    var = pred.xi_vol @ x0_v + pred.xi_rain @ w_v
    shape = (lay.n_tanks, horizon)
    return mean.reshape(shape), var.reshape(shape)


def relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Largest elementwise |a-b| / max(1, |a|, |b|)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


# ---------------------------------------------------------------------------
# Quantile oracle: bisection on the error function
# ---------------------------------------------------------------------------

def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def quantile_by_bisection(p: float) -> float:
    """Standard-normal quantile by bisecting the CDF on [-10, 10]."""
    lo, hi = -10.0, 10.0
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Random QP instances
# ---------------------------------------------------------------------------

def random_small_qp(rng: np.random.Generator, n: int | None = None,
                    m: int | None = None):
    """Random strictly convex QP with a nonempty feasible set.

    Sized for the brute-force enumeration reference; the random slack keeps
    an interior point while leaving constraints likely active at the optimum.
    """
    from ccmpc.qp import QpProblem

    n = int(rng.integers(2, 7)) if n is None else n
    m = int(rng.integers(1, 9)) if m is None else m
    mat = rng.normal(size=(n, n))
    h = mat @ mat.T + n * np.eye(n)
    g = rng.normal(scale=2.0, size=n)
    a = rng.normal(size=(m, n))
    x_interior = rng.normal(scale=0.5, size=n)
    b = a @ x_interior + rng.uniform(0.05, 1.0, size=m)
    return QpProblem(h=h, g=g, a=a, b=b)

"""Deterministic and chance-constrained MPC for urban drainage networks.

The package provides a validated network model, moment-propagating horizon
prediction, margin-tightened constraint assembly, a dense interior-point QP
solver, a receding-horizon controller, an exact-mass-balance plant simulator
and an experiment sweep harness with a CLI front end.
"""

from importlib import resources

from .constraints import (
    ConstraintSystem,
    CostWeights,
    assemble_chance,
    assemble_deterministic,
    build_cost,
    dump_system,
    row_std,
    std_normal_quantile,
    tightened_rhs,
    tightening_offsets,
    tightening_quantile,
    verify_decoupling,
)
from .controller import (
    MODE_CC,
    MODE_DET,
    ControlDecision,
    ControlError,
    Controller,
    DisturbanceForecast,
    MpcConfig,
    StateMoments,
    exact_state,
    load_checkpoint,
    mpc_step,
    save_checkpoint,
)
from .network import (
    NetworkConfigError,
    NetworkSpec,
    parse_network,
    parse_network_file,
    serialize_network,
    topological_order,
)
from .prediction import (
    CondensedPrediction,
    affine_row_std,
    condense,
    make_layout,
    predict_volume_stats,
    step_controlled_tank,
    step_delay,
    step_passive_tank,
)
from .qp import QpProblem, QpSolution, enumerate_small, kkt_residuals, solve
from .simulation import (
    KpiReport,
    PlantState,
    Scenario,
    SimulationResult,
    UncertaintyModel,
    compute_kpis,
    dry_weather_equilibrium,
    kpi_deviations,
    make_forecast,
    parse_scenario,
    parse_scenario_file,
    plant_step,
    read_trace_csv,
    run_closed_loop,
    sample_all_inputs,
    sample_runoff,
    scenario_series,
    write_trace_csv,
)
from .sweeps import FAMILIES, RunSpec, family_runs, format_kpi_table, run_sweep

__version__ = "0.1.0"


def bundled_network_text() -> str:
    """JSON text of the bundled six-tank benchmark network."""
    return resources.files("ccmpc.data").joinpath("astlingen.json").read_text()


def bundled_scenario_text() -> str:
    """JSON text of the bundled storm scenario."""
    return resources.files("ccmpc.data").joinpath("storm1.json").read_text()

"""Experiment families, sweep artifacts, table formatting, and the CLI."""

from __future__ import annotations

import hashlib
import json
import subprocess
import sys

import pytest

from ccmpc.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from ccmpc.simulation import KpiReport, parse_scenario
from ccmpc.sweeps import (
    FAMILIES,
    SweepError,
    family_runs,
    format_kpi_table,
    run_sweep,
)

from conftest import single_controlled_doc, single_passive_doc, steady_scenario_doc


def _storm_scenario_doc(n_steps=10):
    doc = steady_scenario_doc("cloudburst", n_steps)
    doc["storms"] = [{"input": "w1", "start_step": 2, "duration_steps": 5,
                      "peak_m3s": 0.9}]
    return doc


def _write_inputs(tmp_path, network_doc=None, scenario_doc=None):
    tmp_path.mkdir(parents=True, exist_ok=True)
    net = tmp_path / "net.json"
    scen = tmp_path / "scenario.json"
    net.write_text(json.dumps(network_doc or single_controlled_doc()),
                   encoding="utf-8")
    scen.write_text(json.dumps(scenario_doc or _storm_scenario_doc()),
                    encoding="utf-8")
    return net, scen


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------

def test_confidence_family_runs():
    runs, baseline = family_runs("confidence")
    assert baseline == "mpc"
    assert [r.name for r in runs] == ["mpc", "cc_g1", "cc_g0.9", "cc_g0.8",
                                      "cc_g0.7", "cc_g0.6"]
    assert runs[0].mode == "det" and runs[0].uncertainty.bound == 0.5
    assert all(r.mode == "cc" for r in runs[1:])
    assert runs[2].uncertainty.gamma == 0.9


def test_bound_family_runs():
    runs, baseline = family_runs("bound")
    assert baseline == "mpc"
    assert [r.name for r in runs] == ["mpc", "cc_p0.25", "cc_p0.5", "cc_p0.75"]
    assert all(r.uncertainty.gamma == 0.9 for r in runs[1:])
    assert [r.uncertainty.bound for r in runs] == [0.5, 0.25, 0.5, 0.75]


def test_scale_family_pairs_and_prepends_unbiased():
    runs, baseline = family_runs("scale", (0.8, 1.2))
    assert baseline == "mpc_a1"
    assert [r.name for r in runs] == ["mpc_a1", "cc_a1", "mpc_a0.8", "cc_a0.8",
                                      "mpc_a1.2", "cc_a1.2"]
    # Both members of a pair face the same biased forecast.
    assert runs[2].uncertainty == runs[3].uncertainty
    assert runs[4].uncertainty.scale == 1.2


def test_offset_family_pairs_and_prepends_zero():
    runs, baseline = family_runs("offset", (0.02, 0.1))
    assert baseline == "mpc_b0"
    assert [r.name for r in runs] == ["mpc_b0", "cc_b0", "mpc_b0.02",
                                      "cc_b0.02", "mpc_b0.1", "cc_b0.1"]
    assert runs[5].uncertainty.offset == 0.1


def test_unknown_family_rejected():
    with pytest.raises(ValueError, match="unknown family"):
        family_runs("wavelength")
    assert FAMILIES == ("confidence", "bound", "scale", "offset")


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def test_sweep_writes_artifacts_and_deviations(single_controlled, tmp_path):
    scenario = parse_scenario(json.dumps(_storm_scenario_doc()))
    sweep = run_sweep(single_controlled, scenario, "confidence", (0.9,),
                      seed=0, horizon=4, out_dir=tmp_path / "confidence")
    assert set(sweep.reports) == {"mpc", "cc_g0.9"}
    assert sweep.baseline_name == "mpc"
    for name in ("mpc", "cc_g0.9"):
        run_dir = tmp_path / "confidence" / name
        assert (run_dir / "trace.csv").is_file()
        doc = json.loads((run_dir / "kpi.json").read_text(encoding="utf-8"))
        assert doc["baseline"] == "mpc"
        assert set(doc["deviations"]) == {"river_pct", "creek_pct",
                                          "total_pct", "wwtp_pct"}
    table = (tmp_path / "confidence" / "table.txt").read_text(encoding="utf-8")
    assert table.splitlines()[0] == "# seed: 0"
    assert "cc_g0.9" in table


def test_sweep_parallel_matches_serial(single_controlled, tmp_path):
    scenario = parse_scenario(json.dumps(_storm_scenario_doc()))
    a = tmp_path / "serial"
    b = tmp_path / "parallel"
    run_sweep(single_controlled, scenario, "confidence", (0.9,),
              seed=0, horizon=4, jobs=1, out_dir=a)
    run_sweep(single_controlled, scenario, "confidence", (0.9,),
              seed=0, horizon=4, jobs=2, out_dir=b)
    for name in ("mpc", "cc_g0.9"):
        for artifact in ("trace.csv", "kpi.json"):
            assert _digest(a / name / artifact) == _digest(b / name / artifact)
    assert _digest(a / "table.txt") == _digest(b / "table.txt")


def test_sweep_failure_raises_after_saving(single_controlled, tmp_path):
    # A scenario whose step size does not match the network fails every run.
    scenario = parse_scenario(json.dumps(
        steady_scenario_doc("bad", 4, delta_t_s=60.0)))
    with pytest.raises(SweepError, match="run 'mpc' failed"):
        run_sweep(single_controlled, scenario, "confidence", (0.9,),
                  horizon=4, out_dir=tmp_path / "x")
    assert (tmp_path / "x" / "table.txt").is_file()


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def test_kpi_table_layout(single_controlled):
    base = KpiReport(seed=0, cso_m3={"C1": 120.0}, river_m3=120.0,
                     creek_m3=0.0, total_m3=120.0, wwtp_m3=900.0)
    cand = KpiReport(seed=0, cso_m3={"C1": 100.0}, river_m3=100.0,
                     creek_m3=0.0, total_m3=100.0, wwtp_m3=920.0,
                     baseline="mpc",
                     deviations={"river_pct": 16.666667, "creek_pct": None,
                                 "total_pct": 16.666667, "wwtp_pct": 2.222222})
    text = format_kpi_table([("mpc", base), ("cc_g0.9", cand)],
                            single_controlled, seed=7)
    lines = text.splitlines()
    assert lines[0] == "# seed: 7"
    assert lines[1] == f"# network: {single_controlled.signature()}"
    assert lines[2].split() == ["mpc", "cc_g0.9"]
    rows = {line.split()[0]: line.split()[1:] for line in lines[3:]}
    assert rows["C1"] == ["120.0", "100.0"]
    assert rows["Total"] == ["120.0", "100.0"]
    assert rows["R.%"] == ["n/a", "+16.6667"]
    assert rows["C.%"] == ["n/a", "n/a"]
    assert rows["WWTP"][0:2] == ["Vol.", "900.0"]  # label contains a space
    assert rows["Imp.%"] == ["n/a", "+2.2222"]


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_run_writes_artifacts(tmp_path, capsys):
    net, scen = _write_inputs(tmp_path)
    out = tmp_path / "out"
    code = main(["run", "--network", str(net), "--scenario", str(scen),
                 "--horizon", "4", "--mode", "det", "--out", str(out)])
    assert code == EXIT_OK
    run_dir = out / "mpc_p0.5"
    assert (run_dir / "trace.csv").is_file()
    assert (run_dir / "kpi.json").is_file()
    table = (run_dir / "table.txt").read_text(encoding="utf-8")
    assert table.startswith("# seed: 0\n")
    captured = capsys.readouterr()
    assert "artifacts in" in captured.out


def test_cli_run_name_encodes_flags(tmp_path):
    net, scen = _write_inputs(tmp_path)
    out = tmp_path / "out"
    code = main(["run", "--network", str(net), "--scenario", str(scen),
                 "--horizon", "4", "--gamma", "0.8", "--bound", "0.25",
                 "--scale", "1.2", "--offset", "0.02", "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "cc_g0.8_p0.25_a1.2_b0.02" / "trace.csv").is_file()


def test_cli_same_seed_reproduces_artifacts(tmp_path):
    net, scen = _write_inputs(tmp_path)
    digests = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        code = main(["run", "--network", str(net), "--scenario", str(scen),
                     "--horizon", "4", "--seed", "3", "--out", str(out)])
        assert code == EXIT_OK
        run_dir = out / "cc_g0.9_p0.5"
        digests.append((_digest(run_dir / "trace.csv"),
                        _digest(run_dir / "kpi.json"),
                        _digest(run_dir / "table.txt")))
    assert digests[0] == digests[1]


def test_cli_half_confidence_equals_deterministic(tmp_path):
    net, scen = _write_inputs(tmp_path)
    out = tmp_path / "out"
    for mode_args in (["--mode", "det"], ["--mode", "cc", "--gamma", "0.5"]):
        code = main(["run", "--network", str(net), "--scenario", str(scen),
                     "--horizon", "4", "--out", str(out)] + mode_args)
        assert code == EXIT_OK
    assert _digest(out / "mpc_p0.5" / "trace.csv") == \
        _digest(out / "cc_g0.5_p0.5" / "trace.csv")


def test_cli_missing_network_is_config_error(tmp_path, capsys):
    _, scen = _write_inputs(tmp_path)
    code = main(["run", "--network", str(tmp_path / "nope.json"),
                 "--scenario", str(scen), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert capsys.readouterr().err.startswith("error:")


def test_cli_bad_values_flag(tmp_path, capsys):
    net, scen = _write_inputs(tmp_path)
    code = main(["sweep", "--network", str(net), "--scenario", str(scen),
                 "--family", "confidence", "--values", "a,b",
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "comma list of numbers" in capsys.readouterr().err


def test_cli_mismatched_scenario_is_solver_error(tmp_path, capsys):
    net, scen = _write_inputs(
        tmp_path, scenario_doc=steady_scenario_doc("bad", 4, delta_t_s=60.0))
    code = main(["sweep", "--network", str(net), "--scenario", str(scen),
                 "--family", "confidence", "--values", "0.9",
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_SOLVER
    assert capsys.readouterr().err.startswith("solver error:")


def test_cli_sweep_prints_table(tmp_path, capsys):
    net, scen = _write_inputs(tmp_path)
    out = tmp_path / "out"
    code = main(["sweep", "--network", str(net), "--scenario", str(scen),
                 "--family", "confidence", "--values", "0.9",
                 "--horizon", "4", "--out", str(out)])
    assert code == EXIT_OK
    captured = capsys.readouterr().out
    assert "sweep 'confidence' finished: 2 runs" in captured
    assert "# network:" in captured
    assert (out / "confidence" / "cc_g0.9" / "kpi.json").is_file()


def _run_once(tmp_path, name, **flags):
    net, scen = _write_inputs(tmp_path)
    out = tmp_path / name
    args = ["run", "--network", str(net), "--scenario", str(scen),
            "--horizon", "4", "--out", str(out)]
    for key, value in flags.items():
        args += [f"--{key}", str(value)]
    assert main(args) == EXIT_OK
    produced = list(out.iterdir())
    assert len(produced) == 1
    return produced[0] / "trace.csv"


def test_cli_plot_single_trace(tmp_path, capsys):
    trace = _run_once(tmp_path, "r1", mode="det")
    capsys.readouterr()
    out = tmp_path / "figs"
    code = main(["plot", "--trace", str(trace), "--out", str(out)])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2  # the single controlled tank plus the overview
    assert lines[0].endswith("volume_C1.svg")
    assert lines[1].endswith("overview.svg")
    for line in lines:
        assert (out / line.split("/")[-1]).is_file()


def test_cli_plot_overlays_runs_from_one_network(tmp_path, capsys):
    t1 = _run_once(tmp_path, "r1", mode="det")
    t2 = _run_once(tmp_path, "r2", mode="cc", gamma=0.8)
    capsys.readouterr()
    code = main(["plot", "--trace", str(t1), "--trace", str(t2),
                 "--out", str(tmp_path / "figs")])
    assert code == EXIT_OK


def test_cli_plot_element_filter_errors(tmp_path, capsys):
    trace = _run_once(tmp_path, "r1", mode="det")
    code = main(["plot", "--trace", str(trace), "--elements", "",
                 "--out", str(tmp_path / "figs")])
    assert code == EXIT_CONFIG
    assert "empty element filter" in capsys.readouterr().err
    code = main(["plot", "--trace", str(trace), "--elements", "ghost",
                 "--out", str(tmp_path / "figs")])
    assert code == EXIT_CONFIG
    assert "ghost" in capsys.readouterr().err


def test_cli_plot_rejects_mixed_networks(tmp_path, capsys):
    t1 = _run_once(tmp_path / "n1", "r1", mode="det")
    net2 = tmp_path / "net2.json"
    net2.write_text(json.dumps(single_passive_doc()), encoding="utf-8")
    scen2 = tmp_path / "scen2.json"
    scen2.write_text(json.dumps(_storm_scenario_doc()), encoding="utf-8")
    out2 = tmp_path / "r2"
    assert main(["run", "--network", str(net2), "--scenario", str(scen2),
                 "--horizon", "4", "--mode", "det",
                 "--out", str(out2)]) == EXIT_OK
    t2 = out2 / "mpc_p0.5" / "trace.csv"
    capsys.readouterr()
    code = main(["plot", "--trace", str(t1), "--trace", str(t2),
                 "--out", str(tmp_path / "figs")])
    assert code == EXIT_CONFIG
    assert "different networks" in capsys.readouterr().err


def test_cli_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ccmpc.cli", "--help"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.startswith("usage: ccmpc")

import json

import numpy as np
import pytest

from fairmpc.cli import RunManifest, main, run, verify
from fairmpc.presets import get_preset
from fairmpc.scenario_io import (ScenarioFormatError, load_scenario_file,
                                 save_scenario_file, scenario_from_dict,
                                 scenario_to_dict)


def test_run_writes_artifacts(tmp_path):
    manifest = RunManifest(preset="two-system", strategy="fair-mpc",
                           out_dir=str(tmp_path / "out"))
    code = run(manifest)
    assert code == 0
    assert (tmp_path / "out" / "trace.csv").exists()
    assert (tmp_path / "out" / "kpi.json").exists()
    assert (tmp_path / "out" / "summary.txt").exists()
    kpi = json.loads((tmp_path / "out" / "kpi.json").read_text())
    assert set(kpi) == {"h_s", "h_tau", "h_u", "h_e", "h_s_individual"}
    assert kpi["h_s"]["variant"] == "terminal"
    assert len(kpi["h_s_individual"]) == 2


def test_run_deterministic_trace(tmp_path):
    outs = []
    for sub in ("a", "b"):
        manifest = RunManifest(preset="two-system",
                               strategy="performance-equality",
                               out_dir=str(tmp_path / sub))
        assert run(manifest) == 0
        outs.append((tmp_path / sub / "trace.csv").read_bytes())
    assert outs[0] == outs[1]


def test_trace_csv_layout(tmp_path):
    manifest = RunManifest(preset="two-system", out_dir=str(tmp_path))
    run(manifest)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:5] == ["t", "x1_1", "x2_1", "u1_1", "u2_1"]
    assert header[5:] == ["u_bar_t", "rho_bar_t", "jain_scaled_t",
                          "equity_t", "solver_status"]
    assert len(lines) == 1 + 20 + 1  # header, steps, final state row
    final = lines[-1].split(",")
    assert final[0] == "20" and final[3] == ""


def test_cli_main_run_and_exit_codes(tmp_path):
    code = main(["run", "--preset", "two-system", "--strategy",
                 "performance-only", "--out", str(tmp_path / "x")])
    assert code == 0
    # unknown preset is rejected by the argument parser itself
    with pytest.raises(SystemExit):
        main(["run", "--preset", "nope", "--out", str(tmp_path)])
    # missing source
    assert main(["run", "--out", str(tmp_path)]) == 1
    manifest = RunManifest(preset=None, scenario_path=None)
    with pytest.raises(ValueError):
        manifest.load()


def test_cli_verify_and_validate(tmp_path, capsys):
    assert main(["verify", "--preset", "two-system", "--draws", "50"]) == 0
    out = capsys.readouterr().out
    assert "pass" in out and "draws: 50" in out
    assert main(["validate", "--preset", "two-system"]) == 0
    out = capsys.readouterr().out
    assert "warning" in out  # budget warning for the tight preset
    assert main(["presets"]) == 0


def test_verify_zero_draws_trivially_passes():
    manifest = RunManifest(preset="two-system", draws=0)
    assert verify(manifest) == 0


def test_scenario_file_round_trip(tmp_path):
    scen = get_preset("motion-two-class")
    path = tmp_path / "scen.json"
    save_scenario_file(scen, path)
    loaded = load_scenario_file(path)
    assert json.dumps(scenario_to_dict(loaded)) \
        == json.dumps(scenario_to_dict(scen))
    # run from file
    manifest = RunManifest(scenario_path=str(path), strategy="fair-mpc",
                           autotune="case-a", out_dir=str(tmp_path / "o"))
    assert run(manifest) == 0


def test_scenario_format_errors_carry_field_path():
    with pytest.raises(ScenarioFormatError) as exc:
        scenario_from_dict({"systems": [{"a": [[1.0]]}],
                            "budget": {"mode": "constant", "u_bar": 1.0},
                            "weights": {}, "horizon": 5, "sim_steps": 5})
    assert "systems[0]" in str(exc.value)
    with pytest.raises(ScenarioFormatError) as exc2:
        scenario_from_dict({"systems": [{"a": [[0.5]], "b": [[1.0]],
                                         "x0": [0.0], "xs": [1.0]}],
                            "budget": {"mode": "hourly", "u_bar": 1.0},
                            "weights": {}, "horizon": 5, "sim_steps": 5})
    assert "budget.mode" in str(exc2.value)


def test_scenario_scalar_broadcasts():
    scen = scenario_from_dict({
        "systems": [{"a": [[0.5]], "b": [[1.0]], "x0": [0.0], "xs": [1.0]},
                    {"a": [[0.4]], "b": [[1.0]], "x0": [0.0], "xs": [1.0]}],
        "budget": {"mode": "constant", "u_bar": 4.0},
        "weights": {"q": 2.0, "rho_bar": 1.5, "w_bar": 1.0, "gamma_u": 0.1,
                    "gamma_e": 1.0, "beta": 0.1, "lambda_x": 0.1,
                    "lambda_u": 0.1},
        "horizon": 5, "sim_steps": 5})
    assert scen.weights.rho_bar == (1.5, 1.5)
    assert np.allclose(scen.weights.q_weights[0], 2.0 * np.eye(1))
    # equilibrium inputs computed when omitted
    assert scen.targets[0].u_s == pytest.approx([0.5])


def test_scenario_with_polytope_sets(tmp_path):
    data = {
        "systems": [
            {"a": [[0.5]], "b": [[1.0]], "x0": [0.0], "xs": [1.0],
             "input_set": {"H": [[1.0], [-1.0]], "h": [4.0, 4.0]}},
            {"a": [[0.4]], "b": [[1.0]], "x0": [0.0], "xs": [1.0],
             "state_set": {"H": [[1.0]], "h": [3.0]}},
        ],
        "budget": {"mode": "constant", "u_bar": 4.0},
        "weights": {"q": 1.0, "rho_bar": 1.0, "w_bar": 1.0, "gamma_u": 0.1,
                    "gamma_e": 1.0, "beta": 0.1, "lambda_x": 0.1,
                    "lambda_u": 0.1},
        "horizon": 5, "sim_steps": 3,
    }
    scen = scenario_from_dict(data)
    assert scen.input_sets[0].n_rows == 2
    assert scen.state_sets[1].n_rows == 1
    path = tmp_path / "constrained.json"
    save_scenario_file(scen, path)
    reloaded = load_scenario_file(path)
    assert reloaded.input_sets[0].n_rows == 2
    manifest = RunManifest(scenario_path=str(path), out_dir=str(tmp_path / "o"))
    assert run(manifest) == 0


def test_budget_in_horizon_flag(tmp_path):
    manifest = RunManifest(preset="two-system", budget_in_horizon=True,
                           out_dir=str(tmp_path))
    assert run(manifest) == 0


def test_hinge_mode_flag(tmp_path):
    code = main(["run", "--preset", "two-system", "--equality-mode",
                 "hinge", "--out", str(tmp_path / "h")])
    assert code == 0

import json

import pytest

from sosenergy.cli import RunConfig, load_config, load_energy, main
from sosenergy.errors import ConfigError
from sosenergy.poly_energy import PolyEnergy
from sosenergy.sos_energy import SosEnergy, SquaredPolyEnergy
from sosenergy.systems import SystemModel

from .conftest import V2, V3


def write_config(tmp_path, **fields):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(fields))
    return str(path)


def test_solve_taylor(tmp_path, capsys):
    config = write_config(tmp_path, system="scalar", method="taylor", degree=3, kind="past")
    out = tmp_path / "out"
    assert main(["solve", "--config", config, "--out", str(out)]) == 0
    energy = load_energy(out / "energy.json")
    assert isinstance(energy, PolyEnergy)
    assert energy.coeffs[2].c[0] == pytest.approx(V2, abs=1e-10)
    assert energy.coeffs[3].c[0] == pytest.approx(V3, abs=1e-8)
    report = json.loads((out / "report.json").read_text())
    assert report["method"] == "taylor"
    assert "=" * 60 in capsys.readouterr().out


def test_solve_windowed_sos(tmp_path):
    schedule = [{"half_width": a} for a in (1, 2, 4, 8)]
    config = write_config(tmp_path, system="scalar", method="sos-colloc", degree=4, schedule=schedule, seed=3)
    out = tmp_path / "out"
    assert main(["solve", "--config", config, "--out", str(out)]) == 0
    assert isinstance(load_energy(out / "energy.json"), SosEnergy)
    report = json.loads((out / "report.json").read_text())
    assert len(report["windows"]) == 4


def test_solve_complete_sos(tmp_path):
    config = write_config(tmp_path, system="scalar", method="complete-sos", degree=3)
    out = tmp_path / "out"
    assert main(["solve", "--config", config, "--out", str(out)]) == 0
    assert isinstance(load_energy(out / "energy.json"), SquaredPolyEnergy)


def test_invalid_sos_degree_is_a_config_error(tmp_path, capsys):
    config = write_config(tmp_path, method="sos-colloc", degree=5)
    assert main(["solve", "--config", config, "--out", str(tmp_path)]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_unknown_keys_are_rejected(tmp_path):
    config = write_config(tmp_path, method="taylor", colour="blue")
    assert main(["solve", "--config", config, "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path):
    system = SystemModel(A=[[-1.0]], B=[[0.0]], C=[[1.0]], eta=1.0)
    system_path = tmp_path / "system.json"
    system.to_json(system_path)
    config = write_config(tmp_path, system=str(system_path), kind="past", method="taylor", degree=2)
    assert main(["solve", "--config", config, "--out", str(tmp_path / "out")]) == 3


def test_dotted_settings_are_nested():
    config = RunConfig.model_validate({"lm.max_iters": 5, "lm": {"grad_tol": 1e-6}})
    assert config.lm == {"grad_tol": 1e-6, "max_iters": 5}
    assert config.settings_overrides() == {"lm": {"grad_tol": 1e-6, "max_iters": 5}}


def test_load_config_reports_every_field(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(write_config(tmp_path, degree=1, seed=-1), None)
    locations = " ".join(err.value.lines)
    assert "degree" in locations and "seed" in locations


def test_seed_flag_overrides_config(tmp_path):
    assert load_config(write_config(tmp_path, seed=4), 9).seed == 9


def test_eval_command(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", write_config(tmp_path, method="taylor", degree=2), "--out", str(out)]) == 0
    points = tmp_path / "points.csv"
    points.write_text("1.0\n0.0\n")
    config = write_config(tmp_path, energy=str(out / "energy.json"), eval_points=str(points))
    assert main(["eval", "--config", config, "--out", str(out)]) == 0

    lines = (out / "eval.csv").read_text().splitlines()
    assert lines[0].startswith("# sosenergy eval config_hash=")
    assert lines[1] == "x1,value,grad1"
    first = [float(v) for v in lines[2].split(",")]
    assert first[1] == pytest.approx(0.5 * V2, rel=1e-12)
    assert first[2] == pytest.approx(V2, rel=1e-12)


def test_eval_needs_inputs(tmp_path):
    assert main(["eval", "--out", str(tmp_path)]) == 2


def test_scalar_error_command(tmp_path):
    config = write_config(tmp_path, degrees=[4], points=21)
    assert main(["scalar-error", "--config", config, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "scalar_error_d4.csv").read_text().splitlines()
    assert lines[0].startswith("# sosenergy scalar-error")
    assert lines[1] == "x,analytic,taylor_4,sos_4,err_taylor,err_sos"
    assert len(lines) == 2 + 21


def test_load_energy_rejects_unknown_documents(tmp_path):
    path = tmp_path / "energy.json"
    path.write_text(json.dumps({"something": 1}))
    with pytest.raises(ConfigError):
        load_energy(path)


@pytest.mark.parametrize(
    "system, params",
    [("vdp_ring", {"b": [1, 1]}), ("burgers", {"n_elem": 12, "m": 5}), ("burgers", {"n_elem": 2})],
)
def test_bad_system_parameters_are_config_errors(tmp_path, capsys, system, params):
    config = write_config(tmp_path, system=system, system_params=params, method="taylor", degree=2)
    assert main(["solve", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_rerun_writes_identical_csv(tmp_path):
    config = write_config(tmp_path, degrees=[4], points=21, seed=5)
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["scalar-error", "--config", config, "--out", str(first), "--serial"]) == 0
    assert main(["scalar-error", "--config", config, "--out", str(second), "--serial"]) == 0
    assert (first / "scalar_error_d4.csv").read_bytes() == (second / "scalar_error_d4.csv").read_bytes()

import json
from dataclasses import replace

import pytest
import yaml

from app.cli import main, parse_arch
from app.exceptions import ConfigError
from app.services import dataset as dataset_service
from app.services import mlp as mlp_service


def di_config(**overrides):
    cfg = {
        "problem": {"id": "double_integrator"},
        "sampling": {
            "n_samples": 3,
            "dt": 0.25,
            "multiplier_ranges": [[-30.0, 30.0], [-15.0, 15.0]],
            "seed": 7,
        },
        "integrator": {"method": "rk45_adaptive", "rel_tol": 1e-10, "abs_tol": 1e-12},
        "training": {"hidden_layers": [4], "max_epochs": 3, "batch_size": 8},
        "simulation": {
            "guidance_step": 1e-3,
            "plant_step": 1e-3,
            "controller": "analytic",
            "scenarios": {"unit_offset": {"initial_state": [1.0, 0.0], "t_go": 1.0}},
        },
        "monte_carlo": {
            "histogram_bins": 4,
            "tests": {"positions": {"base_scenario": "unit_offset", "n_runs": 3, "state_ranges": [[0.5, 1.5], None]}},
        },
        "verify": {"fraction": 1.0, "tolerance": 1e-9},
    }
    for section, values in overrides.items():
        cfg[section] = {**cfg[section], **values}
    return cfg


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "di.yaml"
    path.write_text(yaml.safe_dump(di_config()))
    return path


@pytest.fixture
def generated(tmp_path, config_file):
    out = tmp_path / "data" / "di.csv"
    assert main(["generate", "--config", str(config_file), "--out", str(out)]) == 0
    return out


def manifest(directory, subcommand):
    return json.loads((directory / f"{subcommand}.manifest.json").read_text())


def test_generate_writes_dataset_and_manifest(generated):
    ds = dataset_service.read_dataset(generated)
    assert len(ds) == 12
    doc = manifest(generated.parent, "generate")
    assert doc["exit_code"] == 0
    assert doc["summary"]["records"] == 12
    assert doc["summary"]["problem_id"] == "double_integrator"
    assert doc["summary"]["extremals_built"] == 3
    assert doc["outputs"] == [str(generated)]


def test_generate_is_reproducible(tmp_path, config_file, generated):
    again = tmp_path / "again" / "di.csv"
    assert main(["generate", "--config", str(config_file), "--out", str(again)]) == 0
    assert again.read_bytes() == generated.read_bytes()


def test_seed_flag_overrides_the_config(tmp_path, config_file, generated):
    other = tmp_path / "other" / "di.csv"
    assert main(["generate", "--config", str(config_file), "--seed", "8", "--out", str(other)]) == 0
    assert other.read_bytes() != generated.read_bytes()
    assert dataset_service.read_dataset(other).meta.seed == 8


def test_invalid_config_exits_with_usage_code(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(di_config(sampling={"dt": -0.1})))
    out = tmp_path / "ds.csv"
    assert main(["generate", "--config", str(path), "--out", str(out)]) == 2
    assert not out.exists()


def test_config_for_another_problem(tmp_path, config_file):
    assert main(["generate", "--problem", "proximity", "--config", str(config_file),
                 "--out", str(tmp_path / "ds.csv")]) == 2


def test_train_on_missing_dataset(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "m.json")]) == 2


def test_train_writes_model_and_log(tmp_path, config_file, generated):
    out = tmp_path / "models" / "di.json"
    code = main(["train", "--dataset", str(generated), "--config", str(config_file),
                 "--arch", "2x5", "--epochs", "4", "--out", str(out)])
    assert code == 0
    model = mlp_service.read_model(out)
    assert model.sizes == [3, 5, 5, 1]
    log_lines = (out.parent / "di.training.csv").read_text().splitlines()
    assert len(log_lines) == 5
    assert manifest(out.parent, "train")["inputs"] == [str(generated)]


def test_simulate_with_the_analytic_law(tmp_path, config_file):
    out_dir = tmp_path / "sim"
    code = main(["simulate", "--config", str(config_file), "--compare-oracle", "--out-dir", str(out_dir)])
    assert code == 0
    reports = json.loads((out_dir / "simulate.summary.json").read_text())
    assert reports[0]["scenario"] == "unit_offset"
    assert reports[0]["effort"] == pytest.approx(12.0, rel=1e-3)
    assert reports[0]["oracle_effort"] == pytest.approx(12.0, rel=1e-6)
    lines = (out_dir / "unit_offset.trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x,v,u"
    assert len(lines) == 1001


def test_simulate_unknown_scenario(tmp_path, config_file):
    code = main(["simulate", "--config", str(config_file), "--scenario", "nowhere", "--out-dir", str(tmp_path)])
    assert code == 2


def test_simulate_mlp_without_model(tmp_path, config_file):
    assert main(["simulate", "--config", str(config_file), "--controller", "mlp", "--out-dir", str(tmp_path)]) == 2


def test_monte_carlo_outputs(tmp_path, config_file, generated):
    out_dir = tmp_path / "mc"
    code = main(["monte-carlo", "--config", str(config_file), "--runs", "2", "--dataset", str(generated),
                 "--out-dir", str(out_dir)])
    assert code == 0
    runs = (out_dir / "positions.runs.csv").read_text().splitlines()
    assert runs[0] == "run_id,terminal_error,error_1,error_2,effort,aborted,arrival_offset,x1"
    assert len(runs) == 3
    summary = json.loads((out_dir / "positions.summary.json").read_text())
    assert summary["n_runs"] == 2
    assert (out_dir / "positions.histogram_effort.csv").exists()
    traj = (out_dir / "positions.trajectories.csv").read_text().splitlines()
    assert traj[0] == "run_id,t,x,v,u"
    assert {line.split(",")[0] for line in traj[1:]} == {"0", "1"}
    assert len(traj) == 1 + 2 * 1000
    assert manifest(out_dir, "monte-carlo")["summary"]["positions"]["n_aborted"] == 0


def test_train_on_a_non_utf8_dataset(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"# mecp-dataset v1\n\xff\xfe\n")
    assert main(["train", "--dataset", str(path), "--out", str(tmp_path / "m.json")]) == 2


def test_coverage_counts_start_states(tmp_path):
    path = tmp_path / "di.yaml"
    square = {"base_scenario": "unit_offset", "state_ranges": [[-1e9, 1e9], [-1e9, 1e9]]}
    path.write_text(yaml.safe_dump(di_config(monte_carlo={"tests": {"square": square}})))
    out = tmp_path / "coverage.json"
    assert main(["coverage", "--config", str(path), "--test", "square", "--samples", "4", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["hits"] == report["samples"] == 4
    assert report["hit_rate"] == 1.0


def test_coverage_needs_a_full_box(tmp_path, config_file):
    out = tmp_path / "coverage.json"
    assert main(["coverage", "--config", str(config_file), "--test", "positions", "--out", str(out)]) == 2


def test_conjugate_scan_of_a_single_sample(tmp_path, config_file):
    out = tmp_path / "scan.csv"
    assert main(["conjugate-scan", "--config", str(config_file), "--nu=-24,12", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "sample,sigma,det,scaled_det"
    assert len(lines) > 2
    assert manifest(tmp_path, "conjugate-scan")["summary"]["conjugate_times"] == {"0": None}


def test_verify_passes_on_a_fresh_dataset(tmp_path, config_file, generated):
    out = tmp_path / "verify.json"
    assert main(["verify", "--dataset", str(generated), "--config", str(config_file), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["pass_rate"] == 1.0


def test_verify_reports_numerical_failure(tmp_path, config_file, generated):
    ds = dataset_service.read_dataset(generated)
    broken = tmp_path / "broken.csv"
    dataset_service.write_dataset(replace(ds, u=ds.u + 1.0), broken)
    out = tmp_path / "verify.json"
    assert main(["verify", "--dataset", str(broken), "--config", str(config_file), "--out", str(out)]) == 3
    assert json.loads(out.read_text())["pass_rate"] < 1.0
    assert manifest(tmp_path, "verify")["exit_code"] == 3


@pytest.mark.parametrize("text, widths", [("3x30", [30, 30, 30]), ("20,10", [20, 10]), ("", [])])
def test_parse_arch(text, widths):
    assert parse_arch(text) == widths


def test_parse_arch_rejects_garbage():
    with pytest.raises(ConfigError, match="--arch"):
        parse_arch("wide")

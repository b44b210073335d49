import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from fracshe import __version__, harness
from fracshe.cli import main
from fracshe.errors import ConfigurationError, ReplayError
from fracshe.harness import ExperimentConfig, config_from_dict, execute, load_config, replay, write_simulation

SMALL = {
    "model": {"alpha": 1.5, "gamma": 0.5, "dim": 1},
    "grid": {"extent": 8.0, "n": 128},
    "solver": {"dt": 0.0625, "t_end": 1.0, "record_times": [0.5, 1.0]},
    "estimator": {"eps_ladder": [0.25, 0.5]},
    "ensemble": {"members": 40, "seed": 7},
    "experiments": ["constants", {"name": "variance", "tolerance": 0.5}, "increments"],
}
CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small(tmp_path, **changes) -> ExperimentConfig:
    data = json.loads(json.dumps(SMALL))
    data.update(changes)
    data["output_dir"] = str(tmp_path)
    return ExperimentConfig.from_dict(data)


def write_config(tmp_path, data=None, name="cfg.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(SMALL if data is None else data))
    return path


# ---------------------------------------------------------------------------
# configuration


def test_config_round_trip(tmp_path):
    cfg = small(tmp_path)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert json.loads(json.dumps(cfg.to_dict())) == cfg.to_dict()


@pytest.mark.parametrize("path", ["config.typo", "model.beta", "grid.h", "solver.cfl", "ensemble.size",
                                  "estimator.eps"])
def test_unknown_keys_rejected(path):
    data = json.loads(json.dumps(SMALL))
    section, key = path.split(".")
    if section == "config":
        data[key] = 1
    else:
        data[section][key] = 1
    with pytest.raises(ConfigurationError, match="unknown"):
        ExperimentConfig.from_dict(data)


def test_unknown_experiment_and_option():
    with pytest.raises(ConfigurationError, match="unknown experiment"):
        ExperimentConfig.from_dict({**SMALL, "experiments": ["spectra"]})
    with pytest.raises(ConfigurationError, match="unknown options"):
        ExperimentConfig.from_dict({**SMALL, "experiments": [{"name": "clt", "tol": 1}]})


def test_config_needs_solver_for_simulating_experiments():
    data = {k: v for k, v in SMALL.items() if k != "solver"}
    with pytest.raises(ConfigurationError, match="solver"):
        ExperimentConfig.from_dict(data)


def test_seed_range():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({**SMALL, "ensemble": {"seed": 2**64}})


def test_all_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.json")):
        cfg = load_config(path)
        assert ExperimentConfig.from_dict(cfg.to_dict()).run_id() == cfg.run_id(), path.name


def test_run_id_is_deterministic_and_sensitive(tmp_path):
    a, b = small(tmp_path), small(tmp_path / "elsewhere")
    assert a.run_id() == b.run_id()
    assert a.run_id() != small(tmp_path, ensemble={"members": 40, "seed": 8}).run_id()
    assert a.run_id() != a.run_id("0.0.0")


def test_overrides():
    cfg = config_from_dict(SMALL, {"seed": 99, "output_dir": "/x"})
    assert cfg.seed == 99 and cfg.output_dir == "/x"
    with pytest.raises(ConfigurationError):
        config_from_dict(SMALL, {"threads": 2})


# ---------------------------------------------------------------------------
# execution and artifacts


def test_execute_writes_artifacts(tmp_path):
    record, results = execute(small(tmp_path))
    assert record.directory == tmp_path / record.run_id
    files = sorted(p.name for p in record.directory.iterdir())
    assert files == sorted(record.artifacts + ["manifest.json"])
    manifest = json.loads((record.directory / "manifest.json").read_text())
    assert manifest["run_id"] == record.run_id and manifest["code_version"] == __version__
    assert manifest["finished"] is not None
    for name in ("constants", "variance", "increments"):
        verdict = json.loads((record.directory / f"{name}.json").read_text())
        assert set(verdict) >= {"pass", "metrics"}
    assert record.exit_code == (0 if record.passed else 1)


def test_manifest_written_before_computation(tmp_path, monkeypatch):
    seen = {}
    original = harness.EXPERIMENTS["constants"]

    def spy(ctx, opts):
        d = tmp_path / ctx.cfg.run_id()
        manifest = json.loads((d / "manifest.json").read_text())
        seen["config"] = manifest["config"]
        seen["finished"] = manifest["finished"]
        return original(ctx, opts)

    monkeypatch.setitem(harness.EXPERIMENTS, "constants", spy)
    cfg = small(tmp_path)
    execute(cfg)
    assert seen["config"] == cfg.to_dict()
    assert seen["finished"] is None


def test_identical_bytes_across_runs_and_threads(tmp_path):
    r1, _ = execute(small(tmp_path / "a"))
    r2, _ = execute(small(tmp_path / "b"), threads=3)
    for name in r1.artifacts:
        assert (r1.directory / name).read_bytes() == (r2.directory / name).read_bytes(), name


def test_replay_identical(tmp_path):
    record, _ = execute(small(tmp_path))
    again = replay(record.run_id, tmp_path)
    assert again.run_id == record.run_id
    assert replay(record.run_id, tmp_path, threads=4).artifacts == record.artifacts


def test_replay_refuses_edited_config(tmp_path):
    record, _ = execute(small(tmp_path))
    path = record.directory / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["config"]["ensemble"]["seed"] = 8
    path.write_text(json.dumps(manifest))
    with pytest.raises(ReplayError, match="edited"):
        replay(record.run_id, tmp_path)


def test_replay_refuses_version_mismatch(tmp_path):
    record, _ = execute(small(tmp_path))
    path = record.directory / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["code_version"] = "0.0.1"
    path.write_text(json.dumps(manifest))
    with pytest.raises(ReplayError) as info:
        replay(record.run_id, tmp_path)
    assert "0.0.1" in str(info.value) and __version__ in str(info.value)


def test_replay_detects_tampered_artifact(tmp_path):
    record, _ = execute(small(tmp_path))
    (record.directory / "variance.csv").write_bytes(b"t\n0\n")
    with pytest.raises(ReplayError, match="variance.csv"):
        replay(record.run_id, tmp_path)


def test_replay_missing_run(tmp_path):
    with pytest.raises(ReplayError, match="no manifest"):
        replay("0123456789abcdef", tmp_path)


def test_numeric_failure_is_recorded(tmp_path):
    data = json.loads(json.dumps(SMALL))
    data["model"]["drift"] = {"kind": "linear", "slope": 5000.0}
    data["model"]["init"] = {"kind": "constant", "value": 1.0}
    record, results = execute(small(tmp_path, model=data["model"]))
    assert record.numeric_failure and record.exit_code == 3
    variance = json.loads((record.directory / "variance.json").read_text())
    assert variance["pass"] is False and "BlowUpError" in variance["error"]


def test_simulation_dump_and_replay(tmp_path):
    cfg = small(tmp_path, ensemble={"members": 2, "seed": 1})
    record = write_simulation(cfg)
    assert record.artifacts == ["field_t0.5.csv", "field_t1.0.csv"]
    lines = (record.directory / "field_t1.0.csv").read_text().splitlines()
    assert lines[0] == "site,x1,value,member" and len(lines) == 1 + 2 * 128
    assert record.run_id != cfg.run_id()
    replay(record.run_id, tmp_path)


# ---------------------------------------------------------------------------
# command line


def test_cli_constants(capsys):
    assert main(["constants", "--alpha", "1.5", "--gamma", "0.5"]) == 0
    out = {r["name"]: r["value"] for r in json.loads(capsys.readouterr().out)}
    assert out["hurst"] == 0.5 and out["c_agd"] == pytest.approx(2**-0.5, abs=1e-9)


def test_cli_kernel(capsys):
    assert main(["kernel", "--alpha", "2", "--t", "1", "--n", "64", "--extent", "16"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "x,G" and len(lines) == 65
    x, g = map(float, lines[33].split(","))
    assert x == 0.0 and g == pytest.approx((4 * 3.141592653589793) ** -0.5, abs=1e-12)


def test_cli_fbm(capsys):
    assert main(["fbm", "--hurst", "0.5", "--n", "4096", "--samples", "50", "--summary", "--seed", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mean_1_over_H_variation"] == pytest.approx(1.0, abs=0.05)
    assert main(["fbm", "--hurst", "0.7", "--n", "8"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "sample,x,value" and lines[1] == "0,0.0,0.0"


def test_cli_exit_codes(tmp_path, capsys):
    ok = write_config(tmp_path, {**SMALL, "experiments": ["constants"]})
    assert main(["--output-dir", str(tmp_path), "run", "--config", str(ok)]) == 0

    failing = write_config(tmp_path, {**SMALL, "experiments": [{"name": "variance", "tolerance": 1e-12}]}, "f.json")
    assert main(["run", "--config", str(failing), "--output-dir", str(tmp_path)]) == 1

    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and err["error"] == "ConfigurationError"
    bad = write_config(tmp_path, {**SMALL, "model": {"alpha": 2.5, "gamma": 0.5}}, "bad.json")
    assert main(["run", "--config", str(bad)]) == 2

    model = {**SMALL["model"], "drift": {"kind": "linear", "slope": 5000.0}, "init": {"kind": "constant", "value": 1.0}}
    blow = write_config(tmp_path, {**SMALL, "model": model, "experiments": ["variance"]}, "blow.json")
    assert main(["run", "--config", str(blow), "--output-dir", str(tmp_path)]) == 3


def test_cli_verify_adds_experiment(tmp_path, capsys):
    cfg = write_config(tmp_path, {**SMALL, "experiments": ["constants"]})
    assert main(["verify", "increments", "--config", str(cfg), "--output-dir", str(tmp_path)]) in (0, 1)
    out = json.loads(capsys.readouterr().out)
    assert list(out["verdicts"]) == ["increments"]
    assert out["artifacts"] == ["increments.csv", "increments.json"]


def test_cli_replay(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["run", "--config", str(cfg), "--output-dir", str(tmp_path)])
    run_id = json.loads(capsys.readouterr().out)["run_id"]
    assert main(["replay", run_id, "--output-dir", str(tmp_path), "--threads", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["replay"] == "identical"


def test_cli_simulate(tmp_path, capsys):
    cfg = write_config(tmp_path, {**SMALL, "ensemble": {"members": 1, "seed": 0}})
    assert main(["simulate", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (Path(out["directory"]) / "field_t1.0.csv").exists()


def test_cli_env_overrides(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path, {**SMALL, "experiments": ["constants"]})
    monkeypatch.setenv("FRACSHE_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("FRACSHE_SEED", "123")
    assert main(["run", "--config", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert Path(out["directory"]).parent == tmp_path / "env"
    manifest = json.loads((Path(out["directory"]) / "manifest.json").read_text())
    assert manifest["config"]["ensemble"]["seed"] == 123
    # flags win over the environment
    assert main(["run", "--config", str(cfg), "--seed", "5", "--output-dir", str(tmp_path / "flag")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert Path(out["directory"]).parent == tmp_path / "flag"
    monkeypatch.setenv("FRACSHE_THREADS", "zero")
    assert main(["run", "--config", str(cfg)]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fracshe.cli", "--version"], capture_output=True, text=True,
                          env={**os.environ, "PYTHONPATH": str(Path(__file__).resolve().parents[1] / "src")})
    assert proc.returncode == 0 and proc.stdout.strip() == __version__

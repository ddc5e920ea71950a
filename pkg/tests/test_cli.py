import json
import subprocess
import sys

import pytest

from stokesneck.cli import EXIT_COMPUTE, EXIT_CONFIG, EXIT_OK, main
from stokesneck.config import ConfigError, RunConfig
from stokesneck.experiments import write_records_csv


def _config(tmp_path, d, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return str(path)


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# ------------------------------------------------------------------ exit codes
def test_missing_subcommand(capsys):
    assert main([]) == EXIT_CONFIG
    assert _error(capsys)["error"] == "usage"


def test_unknown_subcommand(capsys):
    assert main(["bogus"]) == EXIT_CONFIG
    assert _error(capsys)["error"] == "usage"


def test_missing_config_flag_and_file(tmp_path, capsys):
    assert main(["asym"]) == EXIT_CONFIG
    assert main(["asym", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG
    assert "not found" in _error(capsys)["message"]


def test_malformed_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{ not json")
    assert main(["asym", "--config", str(path)]) == EXIT_CONFIG
    assert "malformed" in _error(capsys)["message"]


@pytest.mark.parametrize("cfg", [
    {"geometry": {"eps": 1e-2}, "plotting": {}},
    {"solver": {"backend": "auto", "tolerance": 1}},
    {"mesh": {"n_layer": 8}},
    {"experiment": {"eps": [1e-2, 1e-1]}},
    {"geometry": {"eps": -1.0}},
    {"bc": {"class": "Phi3"}},
])
def test_invalid_configurations(tmp_path, capsys, cfg):
    assert main(["asym", "--config", _config(tmp_path, cfg)]) == EXIT_CONFIG
    assert _error(capsys)["error"] == "config"


def test_bad_thread_count(tmp_path):
    assert main(["sweep", "--config", _config(tmp_path, {}), "--threads", "0"]) == EXIT_CONFIG


# ------------------------------------------------------------------ configuration
def test_run_config_defaults_and_validation():
    cfg = RunConfig.from_dict({"geometry": {"eps": 1e-3}})
    assert cfg.geometry.eps == 1e-3 and cfg.bc.variant == "Phi1"
    assert cfg.to_dict()["geometry"]["kappa1"] == 2.0
    with pytest.raises(ConfigError):
        RunConfig.from_dict([])
    with pytest.raises(ConfigError, match="Custom"):
        RunConfig.from_dict({"bc": {"class": "Custom"}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"solver": {"backend": "umfpack"}})
    sc = RunConfig.from_dict({"experiment": {"eps": [1e-2, 1e-3, 1e-4]}}).sweep_config(workers=3)
    assert sc.eps == (1e-2, 1e-3, 1e-4) and sc.workers == 3


# ------------------------------------------------------------------ subcommands
def test_asym_output(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["asym", "--config", _config(tmp_path, {"geometry": {"eps": 1e-3}}), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "40.8407" in text and "31.4159" in text
    doc = json.loads((out / "asym.json").read_text())
    assert set(doc) == {"config", "result", "content_hash"}
    rows = {r["entry"]: r for r in doc["result"]["leading_terms"]}
    assert rows["a11"]["power"] == "-1/2" and rows["a12"]["bound_only"]


def test_fit_subcommand(tmp_path, capsys):
    records = []
    for e in (1e-2, 1e-3, 1e-4):
        rec = {"eps": e, "grad_mid": e**-0.5, "p_osc": 1 / e, "det": 1.0, "envelope": {"delta_grad": 1.0,
               "sqrt_delta_grad": 1.0}, "A": [[1.0] * 3] * 3, "Q": [0.0] * 3, "C": [0.0] * 3,
               "shifted": {"1": [0.0] * 3, "2": [0.0] * 3}, "blowup": {"raw": 0.0, "H1": 0.0, "H2": 0.0},
               "mesh": {"n_triangles": 10, "max_scaled_aspect": 1.0}}
        records.append(rec)
    csv_path = tmp_path / "s.csv"
    write_records_csv(records, csv_path)
    out = tmp_path / "fit"
    assert main(["fit", "--input", str(csv_path), "--out", str(out)]) == EXIT_OK
    fit = json.loads(capsys.readouterr().out)
    assert fit["slope"] == pytest.approx(-0.5, abs=1e-12)
    assert main(["fit", "--input", str(csv_path), "--column", "p_osc", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "fit.json").read_text())["result"]["slope"] == pytest.approx(-1.0, abs=1e-12)
    assert main(["fit", "--input", str(csv_path), "--column", "nope", "--out", str(out)]) == EXIT_CONFIG
    assert main(["fit", "--input", str(tmp_path / "x.csv"), "--out", str(out)]) == EXIT_CONFIG


def test_fit_with_too_few_rows_is_compute_failure(tmp_path):
    csv_path = tmp_path / "s.csv"
    csv_path.write_text("eps,grad_mid\n0.01,10\n0.001,31\n")
    assert main(["fit", "--input", str(csv_path), "--out", str(tmp_path)]) == EXIT_COMPUTE


def test_solve_writes_stamped_files(tmp_path, capsys):
    out = tmp_path / "solve"
    cfg = _config(tmp_path, {"geometry": {"eps": 1e-1}, "bc": {"class": "Phi2"}})
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert len(summary["C"]) == 3
    for name in ("interaction.json", "diagnostics.json"):
        doc = json.loads((out / name).read_text())
        assert doc["config"]["bc"] == {"class": "Phi2"} and len(doc["content_hash"]) == 64
    with open(out / "fields.csv") as f:
        lines = [next(f) for _ in range(3)]
    assert lines[0].startswith("# config_hash=") and lines[1].startswith("# content_hash=")
    assert lines[2].strip().split(",")[0] == "x1"


def test_oracle_compare_subcommand(tmp_path, capsys):
    cfg = _config(tmp_path, {"geometry": {"eps": 1e-1}})
    assert main(["oracle-compare", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert res["velocity_rel_l2"] < 1e-8 and res["C_abs"] < 1e-8


def test_check_aux_passes(tmp_path, capsys):
    cfg = _config(tmp_path, {"experiment": {"samples": [40, 6], "check_aux_eps": [1e-2, 1e-3]}})
    assert main(["check-aux", "--config", cfg, "--out", str(tmp_path / "c")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["pass"] is True


def test_module_entry_point(tmp_path):
    cfg = _config(tmp_path, {})
    res = subprocess.run([sys.executable, "-m", "stokesneck", "asym", "--config", cfg, "--out", str(tmp_path)],
                         capture_output=True, text=True, timeout=300)
    assert res.returncode == 0 and "a11" in res.stdout

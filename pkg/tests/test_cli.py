import json

import numpy as np
import pytest

from rungelab.cli import main
from rungelab.experiments import EXPERIMENTS, load_preset, normalize_config


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_presets_exist_and_normalize():
    for name in EXPERIMENTS:
        cfg = normalize_config(load_preset(name))
        assert cfg["experiment"] == name


@pytest.mark.parametrize(
    "exp, patch, field",
    [
        ("svd-export", {"geometry": {"N": "big"}}, "geometry.N"),
        ("cost-curve", {"cost_curve": {"epsilons": [0.1, 2.0]}}, "cost_curve.epsilons"),
        ("svd-export", {"threads": 0}, "threads"),
        ("svd-export", {"coefficients": {"preset": "marble"}}, "coefficients"),
    ],
)
def test_config_errors_exit_2_and_name_field(tmp_path, capsys, exp, patch, field):
    cfg = {"experiment": exp, "geometry": {"N": 16}}
    cfg.update(patch)
    code = main([exp, "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert field in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_experiment_mismatch_exits_2(tmp_path):
    assert main(["ucp", "--config", _write(tmp_path, {"experiment": "validate"}), "--out", str(tmp_path)]) == 2


def test_resonant_coefficients_exit_3(tmp_path, capsys):
    N = 16
    lam = 8 * N**2 * np.sin(np.pi / (2 * N)) ** 2
    cfg = {
        "experiment": "svd-export",
        "geometry": {"N": N},
        "coefficients": {"preset": "constant", "c": lam, "K": 100.0},
    }
    code = main(["svd-export", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == 3
    assert "eigenvalue" in capsys.readouterr().err


def test_optimality_outputs(tmp_path, capsys):
    out = tmp_path / "opt"
    assert main(["optimality", "--out", str(out)]) == 0
    lines = (out / "optimality.csv").read_text().splitlines()
    assert len(lines) == 21
    doc = json.loads((out / "optimality.json").read_text())
    assert doc["passed"] and doc["metadata"]["experiment"] == "optimality"
    assert "PASS" in capsys.readouterr().out


def test_validate_deterministic_across_threads(tmp_path):
    a, b = tmp_path / "t1", tmp_path / "t4"
    assert main(["validate", "--grid", "16", "--seed", "3", "--threads", "1", "--out", str(a)]) == 0
    assert main(["validate", "--grid", "16", "--seed", "3", "--threads", "4", "--out", str(b)]) == 0
    for f in ("validate.csv", "validate.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    timing = json.loads((b / "validate.timing.json").read_text())
    assert timing["runtime"]["threads"] == 4


def test_seed_changes_hash(tmp_path):
    a, b = tmp_path / "s1", tmp_path / "s2"
    main(["optimality", "--seed", "1", "--out", str(a)])
    main(["optimality", "--seed", "2", "--out", str(b)])
    ha = json.loads((a / "optimality.json").read_text())["metadata"]["config_hash"]
    hb = json.loads((b / "optimality.json").read_text())["metadata"]["config_hash"]
    assert ha != hb

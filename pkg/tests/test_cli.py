import csv
import os
from pathlib import Path

import pytest
import yaml

from lsem import cli
from lsem.config import ConfigError, load_config, parse_config
from lsem.numerics import NumericalError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def read_rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_shipped_configs_validate():
    paths = sorted(CONFIGS.glob("*.yaml"))
    assert paths
    for path in paths:
        assert cli.main(["validate", str(path)]) == 0


def test_validation_lists_every_bad_field(tmp_path, capsys):
    path = write(tmp_path, {"experiment": "converge", "sigma": -1, "beta_star": [1, "x"],
                            "mc": {"n": 0}, "colour": "red", "quadrature": {"nodes_per_dim": 4}})
    assert cli.main(["validate", str(path)]) == 2
    err = capsys.readouterr().err
    for name in ("sigma", "beta_star", "mc.n", "colour", "quadrature"):
        assert name in err
    with pytest.raises(ConfigError) as info:
        parse_config({"experiment": "misspec", "density": "laplace"})
    assert ("fitted_density", "required for the misspec experiment") in info.value.errors


def test_missing_or_malformed_file(tmp_path):
    assert cli.main(["validate", str(tmp_path / "absent.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: [unclosed")
    assert cli.main(["validate", str(bad)]) == 2


def test_converge_run_reaches_truth(tmp_path):
    path = write(tmp_path, {"experiment": "converge", "density": "gaussian", "beta_star": [1.0],
                            "beta0": [0.1], "params": {"tol": 1e-12}})
    assert cli.main(["run", str(path), "--output-dir", str(tmp_path / "out")]) == 0
    rows = read_rows(tmp_path / "out" / "trace.csv")
    assert list(rows[0]) == ["t", "beta_1", "dist", "angle"]
    assert float(rows[-1]["dist"]) < 1e-6


def test_reruns_are_byte_identical_and_stamp_is_opt_in(tmp_path):
    path = write(tmp_path, {"experiment": "finite_sample", "density": "laplace", "beta_star": [1.0],
                            "mc": {"trials": 3}, "params": {"n_grid": [100, 1000, 100000]}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(path), "--output-dir", str(a), "--seed", "4"]) == 0
    assert cli.main(["run", str(path), "--output-dir", str(b), "--seed", "4"]) == 0
    assert (a / "scaling.csv").read_bytes() == (b / "scaling.csv").read_bytes()
    assert "seed=4" in (a / "scaling.csv").read_text().splitlines()[0]
    assert cli.main(["run", str(path), "--output-dir", str(b), "--seed", "5"]) == 0
    assert (a / "scaling.csv").read_bytes() != (b / "scaling.csv").read_bytes()
    assert cli.main(["run", str(path), "--output-dir", str(b), "--stamp"]) == 0
    assert "generated=" in (b / "scaling.csv").read_text()
    assert not list(b.glob(".*.tmp"))


def test_random_initial_point(tmp_path):
    cfg = parse_config({"experiment": "converge", "beta_star": [1.0, 0.5], "beta0": "random(3)"})
    assert cfg.initial_beta().shape == (2,)
    assert (cfg.initial_beta() == cfg.initial_beta()).all()


def test_qcheck_and_misspec_outputs(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(CONFIGS / "qcheck.yaml"), "--output-dir", str(out)]) == 0
    rows = read_rows(out / "qcheck.csv")
    assert [float(r["beta"]) for r in rows] == [0.1, 0.5, 0.8, 1.2, 1.5]
    assert all(float(r["q_gain"]) > 0 for r in rows)

    assert cli.main(["run", str(CONFIGS / "misspec.yaml"), "--output-dir", str(out)]) == 0
    fixed = read_rows(out / "misspec_fixed_points.csv")
    degree = {"raw_poly(1)": 1, "raw_poly(1.5)": 1.5, "raw_poly(2)": 2, "raw_poly(3)": 3}
    for row in fixed:
        if float(row["beta0"]) < 0:
            continue
        r0, r1, bbar = degree[row["truth"]], degree[row["fitted"]], float(row["beta_bar"])
        if r1 > r0:
            assert bbar > 1.0
        elif r1 < r0:
            assert bbar < 1.0
    assert read_rows(out / "misspec.csv")


def test_kappa_and_fixed_point_outputs(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(CONFIGS / "kappa_table.yaml"), "--output-dir", str(out)]) == 0
    assert all(r["bound_holds"] == "1" for r in read_rows(out / "kappa_table.csv"))
    cfg = write(tmp_path, {"experiment": "fixed_points", "density": "logistic", "beta_star": [1.0],
                           "params": {"grid_points": 300}})
    assert cli.main(["run", str(cfg), "--output-dir", str(out)]) == 0
    roots = [float(r["root"]) for r in read_rows(out / "fixed_points.csv")]
    assert roots == pytest.approx([-1.0, 0.0, 1.0], abs=1e-6)


def test_exit_codes_for_numeric_and_io_failures(tmp_path, monkeypatch):
    path = write(tmp_path, {"experiment": "qcheck", "density": "gaussian"})
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    assert cli.main(["run", str(path), "--output-dir", str(blocker / "sub")]) == 1

    def boom(cfg):
        raise NumericalError("quadrature failed")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", str(path), "--output-dir", str(tmp_path / "o")]) == 3
    assert not (tmp_path / "o" / "qcheck.csv").exists()


def test_config_loader_roundtrip():
    cfg = load_config(CONFIGS / "converge_gaussian.yaml")
    assert cfg.experiment == "converge" and cfg.d == 1
    assert cfg.digest() == cfg.with_overrides(output_dir="elsewhere").digest()
    assert cfg.digest() != cfg.with_overrides(seed=99).digest()
    assert os.fspath(cfg.with_overrides(output_dir="x").output_dir) == "x"

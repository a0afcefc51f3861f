import copy
import csv
from pathlib import Path

import pytest
import yaml

from chemostat_recon import cli
from chemostat_recon.cli import ConfigError, load_config, main, parse_config, run_scenario
from chemostat_recon.dynamics import NumericalBlowup

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _doc(name):
    return yaml.safe_load((CONFIGS / f"{name}.yaml").read_text())


def _write(tmp_path, doc, name="scenario.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def _small_newton():
    doc = _doc("newton_grid")
    doc["method"]["grid"] = [0.2, 0.25, 0.3]
    doc["disturbance"]["amplitude"] = 0.0
    doc["integrator"]["h"] = 0.02
    return doc


def _small_drift(amplitude):
    doc = _doc("drift_right")
    doc["method"].update(epsilon=0.005, window=[0.1, 0.5], t_skip=100)
    doc["disturbance"]["amplitude"] = amplitude
    doc["integrator"]["h"] = 0.02
    return doc


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# --- configuration ---------------------------------------------------------

@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_bundled_configs_validate(path):
    cfg = load_config(path)
    assert cfg.name == path.stem


def test_newton_scenario_parameters():
    cfg = load_config(CONFIGS / "newton_grid.yaml")
    assert cfg.kind == "newton"
    assert cfg.controller.G1 == 1.0
    assert (cfg.controller.D_min, cfg.controller.D_max) == (0.02, 0.2)
    assert (cfg.settle.window, cfg.settle.improvement_ratio, cfg.settle.tol) == (20.0, 0.9, 1e-3)
    assert cfg.method["grid"] == pytest.approx([0.05 * k for k in range(1, 20)])


def test_missing_plant_is_reported():
    doc = _doc("newton_grid")
    del doc["plant"]
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert any(e.startswith("plant") for e in exc.value.errors)


def test_zero_gain_rejected_for_newton():
    doc = _doc("newton_grid")
    doc["controller"]["G1"] = 0
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert any(e.startswith("controller.G1") for e in exc.value.errors)


def test_all_errors_reported_together():
    doc = _doc("drift_right")
    doc["controller"]["law"] = "simple"
    doc["method"]["epsilon"] = 0
    doc["disturbance"]["amplitude"] = 1.5
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    paths = {e.split(":")[0] for e in exc.value.errors}
    assert {"controller.law", "method.epsilon", "disturbance.amplitude"} <= paths


def test_range_and_pair_grammar():
    doc = _doc("switch_read_species2")
    cfg = parse_config(doc)
    probes = cfg.method["probes"]
    assert [p[0] for p in probes] == pytest.approx([1.0 - 0.1 * k for k in range(11)])
    assert all(p[1] == 0.15 for p in probes)


def test_validate_command(tmp_path, capsys):
    bad = _doc("newton_grid")
    del bad["plant"]
    assert main(["validate", str(CONFIGS / "newton_grid.yaml")]) == 0
    assert main(["validate", str(_write(tmp_path, bad))]) == 2
    assert "plant" in capsys.readouterr().err


def test_unparsable_file(tmp_path):
    p = tmp_path / "broken.yaml"
    p.write_text("plant: [unclosed\n")
    assert main(["validate", str(p)]) == 2
    assert main(["run", str(p), "--quiet"]) == 2


# --- running --------------------------------------------------------------

def test_newton_run_outputs(tmp_path):
    cfg = parse_config(_small_newton())
    rep = run_scenario(cfg, tmp_path)
    assert rep.exit_code == 0
    ts = _rows(tmp_path / "timeseries.csv")
    assert ts[0] == ["t", "s_true", "s_measured", "b1", "D", "s_bar", "D_bar"]
    rec = _rows(tmp_path / "reconstruction.csv")
    assert len(rec) == 4
    for r in rec[1:]:
        assert 0.02 <= float(r[1]) <= 0.2
        assert float(r[3]) <= 2e-3
    summary = (tmp_path / "summary.txt").read_text()
    for key in ("max_abs_error", "mean_abs_error", "model_time", "wall_time_s", "flagged: 0"):
        assert key in summary


def test_reruns_are_byte_identical(tmp_path):
    p = _write(tmp_path, _small_newton())
    assert main(["run", str(p), "--out-dir", str(tmp_path / "a"), "--quiet"]) == 0
    assert main(["run", str(p), "--out-dir", str(tmp_path / "b"), "--quiet"]) == 0
    for name in ("timeseries.csv", "reconstruction.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def _max_error(lines):
    return float(next(x for x in lines if x.startswith("max_abs_error")).split(":")[1])


def test_disturbance_increases_drift_error(tmp_path):
    clean = run_scenario(parse_config(_small_drift(0.0)), tmp_path / "clean")
    noisy = run_scenario(parse_config(_small_drift(0.05)), tmp_path / "noisy")
    assert clean.exit_code == noisy.exit_code == 0
    assert _max_error(clean.lines) < _max_error(noisy.lines)
    assert any(x.startswith("window_exit_time: ") and "not" not in x for x in clean.lines)


def test_flagged_points_give_exit_code_one(tmp_path):
    doc = _doc("switch_read_species1")
    doc["method"]["probes"] = [[0.3, 0.9]]  # species 1 dominant: no transient maximum
    doc["method"]["probe_timeout"] = 30
    doc["integrator"]["h"] = 0.02
    p = _write(tmp_path, doc)
    assert main(["run", str(p), "--out-dir", str(tmp_path / "o"), "--quiet"]) == 1
    assert "flagged: 1" in (tmp_path / "o" / "summary.txt").read_text()


def test_numerical_failure_gives_exit_code_three(tmp_path, monkeypatch, capsys):
    def boom(cfg, out_dir=None):
        raise NumericalBlowup(12.5, "test")

    monkeypatch.setattr(cli, "run_scenario", boom)
    p = _write(tmp_path, _small_newton())
    assert main(["run", str(p), "--quiet"]) == 3
    assert "t=12.5" in capsys.readouterr().err


def test_small_global_stability_suite(tmp_path):
    doc = _doc("global_stability")
    doc["method"].update(n_pairs=2, n_initial=4, duration=1000)
    doc["integrator"]["h"] = 0.05
    rep = run_scenario(parse_config(doc), tmp_path)
    assert rep.exit_code == 0
    rows = _rows(tmp_path / "reconstruction.csv")
    assert len(rows) == 3
    assert all(float(r[3]) < 1e-6 and float(r[4]) < 1e-6 for r in rows[1:])


def test_seed_changes_sampled_pairs(tmp_path):
    doc = _doc("global_stability")
    doc["method"].update(n_pairs=2, n_initial=2, duration=10)
    doc["integrator"]["h"] = 0.1
    p = _write(tmp_path, doc)
    main(["run", str(p), "--out-dir", str(tmp_path / "a"), "--quiet", "--seed", "1"])
    main(["run", str(p), "--out-dir", str(tmp_path / "b"), "--quiet", "--seed", "2"])
    assert _rows(tmp_path / "a" / "reconstruction.csv") != _rows(tmp_path / "b" / "reconstruction.csv")


def test_batch_run_with_jobs(tmp_path):
    a = _write(tmp_path, _small_newton(), "one.yaml")
    b = _write(tmp_path, _small_newton(), "two.yaml")
    out = tmp_path / "out"
    assert main(["run", str(a), str(b), "--out-dir", str(out), "--jobs", "2", "--quiet"]) == 0
    assert (out / "one" / "summary.txt").exists() and (out / "two" / "summary.txt").exists()
    assert (out / "one" / "reconstruction.csv").read_bytes() == (out / "two" / "reconstruction.csv").read_bytes()


def test_oracle_command(tmp_path, capsys):
    assert main(["oracle", str(CONFIGS / "newton_grid.yaml")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "s_bar,D_bar,s_eq,D_eq"
    assert len(lines) == 20
    assert main(["oracle", str(CONFIGS / "newton_grid.yaml"), "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "oracle.csv")
    for r in rows[1:]:
        assert 0.02 <= float(r[3]) <= 0.2


def test_gain_study_table_columns(tmp_path):
    doc = copy.deepcopy(_doc("gain_study"))
    doc["method"].update(gains=[1, 5], probes={"s_bar": [0.7, 0.8], "D_bar": 0.9}, region=[0.5, 1.0])
    doc["integrator"]["h"] = 0.02
    rep = run_scenario(parse_config(doc), tmp_path)
    rows = _rows(tmp_path / "reconstruction.csv")
    assert rows[0] == ["G1", "s", "mu_est", "mu_true", "rel_error", "converged"]
    assert len(rows) == 5
    assert any(x.startswith("ordering_non_increasing_in_G1") for x in rep.lines)

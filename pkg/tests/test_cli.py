import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from electrolocation import __version__
from electrolocation.cli import EXIT_CONFIG, EXIT_GEOMETRY, EXIT_OK, main
from electrolocation.config import bundled_configs

Z = np.array([0.75, 1.299038105676658])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_list_configs(capsys):
    assert main(["list-configs"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in bundled_configs():
        assert name in out


def test_identity_suite_passes(capsys, tmp_path):
    assert main(["validate", "--out", str(tmp_path)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    rows = read_csv(tmp_path / "identities.csv")
    assert len(rows) == len(lines) and all(r["passed"] == "true" for r in rows)


def test_validate_schema_only(capsys):
    assert main(["validate", "fig3a", "table2"]) == EXIT_OK
    assert "fig3a: ok (locate" in capsys.readouterr().out


def test_run_validate_config(tmp_path):
    assert main(["run", "validate", "--out", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["summary"]["all_passed"] is True
    assert manifest["kind"] == "validate"


def test_scaling_verb(capsys):
    assert main(["scaling"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "xi" in out and "0.1" in out and "(valid)" in out


def test_schema_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("name: bad\nkind: locate\ntarget:\n  shape: {type: disk, radius: 0}\n  center: [1, 1]\n")
    assert main(["run", str(p)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "bad.yaml:4" in err and "target.shape.radius" in err


def test_geometry_conflict_exit_code(tmp_path, capsys):
    p = tmp_path / "clash.yaml"
    p.write_text("name: clash\nkind: locate\ntarget:\n  shape: {type: disk, radius: 0.05}\n"
                 "  center: [0.5, 0.0]\noutput: {dir: " + str(tmp_path / "o") + "}\n")
    assert main(["run", str(p)]) == EXIT_GEOMETRY
    err = capsys.readouterr().err
    assert "clash.yaml:5" in err and "target.center" in err
    assert not (tmp_path / "o").exists()


def test_missing_config_exit_code(capsys):
    assert main(["run", "no-such-config"]) == EXIT_CONFIG


def test_bad_seed_exit_code(capsys):
    assert main(["run", "fig5", "--seed", "-3"]) == EXIT_CONFIG


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "electrolocation", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == __version__


@pytest.mark.slow
def test_fig3a_locates_target(tmp_path):
    assert main(["run", "fig3a", "--out", str(tmp_path)]) == EXIT_OK
    meta = json.loads((tmp_path / "imaging_clean.json").read_text())
    cell = meta["cell"]
    assert np.linalg.norm(np.array(meta["argmax"]) - Z) <= cell
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert meta["config_hash"] == manifest["config_hash"]
    assert {f["file"] for f in manifest["files"]} >= {"imaging_clean.csv", "imaging_clean.json", "config.yaml"}


@pytest.mark.slow
def test_table2_config(tmp_path):
    assert main(["run", "table2", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "disk_characterization.csv")
    assert len(rows) == 5
    for r in rows:
        for key in ("alpha", "sigma", "eps"):
            t, e = float(r[f"{key}_true"]), float(r[f"{key}_est"])
            assert abs(e - t) / t < 0.05
    first = rows[0]
    assert abs(float(first["alpha_est"]) - 0.0506) <= 0.002
    assert abs(float(first["sigma_est"]) - 4.9882) <= 0.05
    assert abs(float(first["eps_est"]) - 1.0004) <= 0.01


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "table3", "--out", str(a)]) == EXIT_OK
    assert main(["run", "table3", "--out", str(b)]) == EXIT_OK
    ta = _tree(a)
    assert ta == _tree(b) and "semi_axes.csv" in ta and "manifest.json" in ta


MINI = """\
name: mini
kind: noise-stats
target:
  shape: {type: disk, radius: 0.05}
  center: [0.75, 1.299038105676658]
grid: {resolution: [61, 61]}
noise: {zetas: [0.0, 0.05], trials: 6, seed: 5, stage: raw}
study:
  sets:
    - {label: N1, frequencies: [1]}
    - {label: N5, frequencies: 5}
"""


@pytest.mark.slow
def test_noise_stats_independent_of_workers(tmp_path):
    cfg = tmp_path / "mini.yaml"
    cfg.write_text(MINI)
    assert main(["run", str(cfg), "--out", str(tmp_path / "w1"), "--workers", "1"]) == EXIT_OK
    assert main(["run", str(cfg), "--out", str(tmp_path / "w3"), "--workers", "3"]) == EXIT_OK
    a = (tmp_path / "w1" / "rms_location_error.csv").read_bytes()
    assert a == (tmp_path / "w3" / "rms_location_error.csv").read_bytes()
    rows = read_csv(tmp_path / "w1" / "rms_location_error.csv")
    assert [r["set"] for r in rows] == ["N1", "N1", "N5", "N5"]
    assert main(["run", str(cfg), "--out", str(tmp_path / "s"), "--seed", "6"]) == EXIT_OK
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["seed"] == 6

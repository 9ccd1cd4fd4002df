import json
import subprocess
import sys
from pathlib import Path

import pytest

from finphase.cli import ConfigError, load_config, main, parse_directions, parse_grid

SPHERE = {"kind": "ellipsoid", "n": 3, "a": [1, 1, 1]}
PARABOLOID = {"kind": "elliptic_paraboloid", "n": 3, "a": [1, 1]}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def run(tmp_path, command, cfg, *extra, out="out"):
    return main([command, write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- parsing -------------------------------------------------------------------------


def test_parse_grid_forms():
    assert list(parse_grid([1, 2], "g")) == [1.0, 2.0]
    assert len(parse_grid({"geomspace": [20, 160, 16]}, "g")) == 16
    for bad in ([], {"linspace": [0, 1]}, {"arange": [0, 1, 2]}, "1,2", [1, "x"]):
        with pytest.raises(ConfigError):
            parse_grid(bad, "g")


def test_parse_directions():
    dirs = parse_directions([[0, 0, 2], [1, 0, 1]], 3, 0.1)
    assert dirs[0].tolist() == [0, 0, 1]
    assert abs(sum(dirs[1] ** 2) - 1) < 1e-15
    grid = parse_directions("grid:4", 3, 0.2)
    assert len(grid) == 4 and all(abs(sum(v**2) - 1) < 1e-15 for v in grid)
    for bad in ("grid:x", "sphere", [], [[0, 1]], [[0, 0, 0]]):
        with pytest.raises(ConfigError):
            parse_directions(bad, 3, 0.1)


def test_load_config_overrides(tmp_path):
    cfg = load_config(write(tmp_path, {"surface": SPHERE, "seed": 4}), seed=9, out="x")
    assert cfg.seed == 9 and str(cfg.output_dir) == "x"
    assert cfg.directions[0].tolist() == [0, 0, 1]


# -- exit codes ----------------------------------------------------------------------


@pytest.mark.parametrize("cfg", [
    {"surface": SPHERE, "oscillate": {"c": 0.2, "lambda_grid": []}},
    {"surface": SPHERE, "bogus": 1},
    {"surface": {"kind": "ellipsoid", "n": 3, "a": [1, -1, 1]}},
    {"surface": SPHERE, "c": -1},
    {"surface": SPHERE, "k_list": [-1]},
    {"lemmas": {"leading": [{"m": 4, "alpha": 1, "N0": 2}]}},
    {"lemmas": {"delta": [{"H": {"dim": 2, "terms": [{"exp": [5, 0], "num": "1", "den": "1"},
                                                      {"exp": [1, 0], "num": "1", "den": "1"}]}}]}},
])
def test_config_errors_exit_2(tmp_path, cfg):
    assert run(tmp_path, "all", cfg) == 2


def test_unreadable_config_exit_2(tmp_path):
    assert main(["volume", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["volume", str(bad)]) == 2
    assert main(["frobnicate", str(bad)]) == 2


def test_short_t_grid_exit_2(tmp_path):
    cfg = {"surface": SPHERE, "volume": {"c": 0.2, "t_grid": [0.05, 0.1, 0.2]}}
    assert run(tmp_path, "volume", cfg) == 2
    cfg["volume"]["t_grid"] = [0.05, 0.1, 0.2, 0.3]
    assert run(tmp_path, "volume", cfg) == 2


def test_volume_needs_surface(tmp_path):
    assert run(tmp_path, "volume", {"lemmas": {}}) == 2


def test_numerical_failure_exit_3(tmp_path):
    cfg = {"surface": SPHERE, "oscillate": {"checks": ["stokes"], "c": 0.95, "lambda_grid": [10]}}
    assert run(tmp_path, "oscillate", cfg) == 3


def test_failed_expectation_exit_1(tmp_path, capsys):
    cfg = {"surface": PARABOLOID, "volume": {"c": 0.3, "t_grid": {"linspace": [0.01, 0.3, 12]},
                                             "expect": {"degree": 2}}}
    assert run(tmp_path, "volume", cfg) == 1
    out = capsys.readouterr().out
    assert "FAIL volume[0] degree: 1 (expected 2)" in out


# -- suites --------------------------------------------------------------------------------


def test_volume_sphere_two_directions(tmp_path, capsys):
    cfg = {"surface": SPHERE, "directions": [[0, 0, 1], [0.1, 0.2, 1]],
           "volume": {"c": 0.3, "t_grid": {"linspace": [0.01, 0.3, 20]},
                      "expect": {"is_polynomial": True, "degree": 2, "agree": True,
                                 "coeffs": [6.283185307179586, -3.141592653589793]}}}
    assert run(tmp_path, "volume", cfg, "--svg") == 0
    verdicts = json.loads((tmp_path / "out/volume/verdicts.json").read_text())
    assert [v["degree"] for v in verdicts] == [2, 2]
    assert (tmp_path / "out/volume/profile_1.svg").read_text().startswith("<svg")
    assert (tmp_path / "out/volume/profile_0.dat").read_text().startswith("# t A err")
    csv = (tmp_path / "out/volume/profile_0.csv").read_text()
    assert csv.startswith("# xi=") and "t,A,err" in csv
    assert "PASS volume directions agree" in capsys.readouterr().out


def test_volume_circle_power_law(tmp_path):
    cfg = {"surface": {"kind": "ellipsoid", "n": 2, "a": [1, 1]}, "directions": [[0, 1]],
           "volume": {"c": 0.3, "t_grid": {"geomspace": [3e-4, 0.3, 24]},
                      "expect": {"is_polynomial": False, "exponent": 0.5}}}
    assert run(tmp_path, "volume", cfg) == 0
    v = json.loads((tmp_path / "out/volume/verdicts.json").read_text())[0]
    assert v["model"] == "power_law"
    assert abs(v["exponent"] - 0.5) < 0.02


def test_oscillate_stokes_and_decay(tmp_path, capsys):
    cfg = {"surface": PARABOLOID, "oscillate": {
        "checks": ["stokes", "decay"],
        "stokes": {"c": 0.3, "lambda_grid": [10, 40]},
        "decay": {"c": 3.0, "lambda_grid": {"geomspace": [20, 160, 8]}}}}
    assert run(tmp_path, "oscillate", cfg, "--svg") == 0
    out = capsys.readouterr().out
    assert "PASS stokes[0]" in out and "PASS decay[0]" in out
    rep = json.loads((tmp_path / "out/oscillate/report.json").read_text())
    assert rep["directions"][0]["decay"]["slope_F2"] <= -5
    assert (tmp_path / "out/oscillate/decay_0.svg").exists()
    head = (tmp_path / "out/oscillate/stokes_0.csv").read_text().splitlines()
    assert "lambda,re_I,im_I,err_I,re_F1" in "\n".join(head)


def test_lemmas_suite(tmp_path, capsys):
    cfg = {"lemmas": {
        "leading": [{"m": 6, "alpha": 2, "n": 3, "N0": 2, "expect_collision": True}],
        "delta": [{"H": {"zero": 2}, "m": 5},
                  {"H": {"random": {"dim": 2, "degree": 5, "seed": 1}}, "alpha": 1}],
        "radial": {"s_max": 3, "d_max": 4},
        "phase": {"count": 3, "mu": 100, "degree": 4},
        "morse": [{"surface": PARABOLOID}],
    }}
    assert run(tmp_path, "lemmas", cfg) == 0
    rep = json.loads((tmp_path / "out/lemmas/report.json").read_text())
    assert rep["leading"][0]["collision"] is True
    assert rep["delta"][0]["value"] == "0"
    assert int(rep["delta"][1]["value"]) > 0 and rep["delta"][1]["identity_holds"]
    out = capsys.readouterr().out
    assert out.count("FAIL") == 0 and "PASS radial constant" in out


def test_determinism_and_jobs(tmp_path):
    cfg = {"surface": SPHERE, "seed": 3, "directions": "grid:2",
           "volume": {"c": 0.2, "t_grid": {"linspace": [0.01, 0.2, 10]}},
           "oscillate": {"checks": ["stokes"], "c": 0.2, "lambda_grid": [10, 20, 30]},
           "lemmas": {"radial": {"s_max": 2, "d_max": 3}}}
    assert run(tmp_path, "all", cfg, "--seed", "11", out="a") == 0
    assert run(tmp_path, "all", cfg, "--seed", "11", out="b") == 0
    assert run(tmp_path, "all", cfg, "--seed", "11", "--jobs", "3", out="c") == 0
    a, b, c = tree(tmp_path / "a"), tree(tmp_path / "b"), tree(tmp_path / "c")
    assert a == b == c
    assert json.loads(a["all_checks.json"])["seed"] == 11


def test_monte_carlo_seed_controls_output(tmp_path):
    cfg = {"surface": {"kind": "ellipsoid", "n": 4, "a": [1, 1, 1, 1]},
           "volume": {"c": 0.2, "t_grid": [0.05, 0.1, 0.15, 0.2], "n_samples": 20000}}
    assert run(tmp_path, "volume", cfg, "--seed", "1", out="a") == 0
    assert run(tmp_path, "volume", cfg, "--seed", "1", out="b") == 0
    assert run(tmp_path, "volume", cfg, "--seed", "2", out="c") == 0
    prof = "volume/profile_0.csv"
    assert tree(tmp_path / "a")[prof] == tree(tmp_path / "b")[prof]
    assert tree(tmp_path / "a")[prof] != tree(tmp_path / "c")[prof]


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, {"lemmas": {"radial": {"s_max": 2, "d_max": 2}}})
    proc = subprocess.run([sys.executable, "-m", "finphase", "lemmas", cfg, "--out",
                           str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "PASS radial constant" in proc.stdout

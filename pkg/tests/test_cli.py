import json
import os
import subprocess
import sys

import pytest

from conftest import SCENARIOS
from netmfg import cli
from netmfg.errors import ConfigurationError, SolverError
from netmfg.scenario import ScenarioParseError, load_scenario, parse_text, build_scenario

SMALL = """
name = "small"
mode = "control"
seed = 3

[network]
junction = 2

[grid]
dx = 0.1
dt = 0.1
T = 0.5
truncation = 1.0

[solver]
n_controls = 65

[costs]
[[costs.edge]]
kappa = 1.0
terminal = [0.0, 1.0]
[[costs.edge]]
kappa = 1.0
terminal = 0.0

[[m0]]
edge = 0
s = 0.5
weight = 1.0

[outputs]
probes = 50
n_ray = 0
"""
SMALL = SMALL.replace("n_ray = 0\n", "")


def _write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_small_run_and_verify(tmp_path):
    src = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert cli.main(["run", str(src), "--out", str(out)]) == 0
    for name in ("value_field.csv", "particles.csv", "flux.csv", "metrics.json", "manifest.json",
                 "diagnostics.json", "envelope.json", "scenario.toml", "marginals/slice_0000.csv",
                 "trajectories/particle_0000.csv"):
        assert (out / name).is_file(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert all("anchor" in m and "pass" in m for m in metrics.values())
    assert metrics["dpp_grid_residual"]["value"] == 0.0
    code, rep = cli.verify_dir(out)
    assert code == 0 and rep["ok"]
    code2, rep2 = cli.verify_dir(out)
    assert rep2 == rep
    assert not (out / "error.json").exists()


def test_runs_are_byte_identical(tmp_path):
    src = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run_scenario(src, a) == 0 and cli.run_scenario(src, b, threads=2) == 0
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert fa == fb
    for rel in fa:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_seed_override_changes_only_probe_dependent_output(tmp_path):
    src = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    cli.run_scenario(src, a)
    cli.run_scenario(src, b, seed=99)
    assert (a / "value_field.csv").read_bytes() == (b / "value_field.csv").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["seed"] == 99


def test_tampered_value_field_fails_dpp(tmp_path):
    src = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    cli.run_scenario(src, out)
    lines = (out / "value_field.csv").read_text().splitlines()
    cells = lines[20].split(",")
    cells[3] = repr(float(cells[3]) + 1e-6)
    lines[20] = ",".join(cells)
    (out / "value_field.csv").write_text("\n".join(lines) + "\n")
    code, rep = cli.verify_dir(out)
    assert code == 5
    assert not rep["dpp_grid_residual"]["pass"] and not rep["artifact_hashes"]["pass"]
    assert rep["artifact_hashes"]["mismatched"] == ["value_field.csv"]


def test_tampered_weights_fail_mass_and_balance(tmp_path):
    src = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    cli.run_scenario(src, out)
    p = out / "marginals" / "slice_0003.csv"
    p.write_text(p.read_text().replace(",1\n", ",9/10\n"))
    code, rep = cli.verify_dir(out)
    assert code == 5 and not rep["mass"]["pass"]


def test_verify_without_manifest_is_a_read_error(tmp_path):
    code, rep = cli.verify_dir(tmp_path)
    assert code == 2 and "error" in rep


@pytest.mark.parametrize("text, code", [
    ("not = [valid", 2),
    (SMALL.replace("dt = 0.1", "dt = -0.1"), 3),
    (SMALL.replace("dt = 0.1", "dt = 0.0"), 3),
    (SMALL.replace("seed = 3", "seed = 3\ncolour = 1"), 3),
    (SMALL.replace('mode = "control"', 'mode = "other"'), 3),
    (SMALL.replace("s = 0.5", "s = 5.0"), 3),
    (SMALL.replace("truncation = 1.0", "truncation = 1.0\n[outputs2]"), 3),
    (SMALL.replace("dt = 0.1", "dt = 0.5"), 3),  # one step travels beyond the truncation
])
def test_exit_codes(tmp_path, text, code):
    out = tmp_path / "out"
    assert cli.main(["run", str(_write(tmp_path, text)), "--out", str(out)]) == code
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == code and err["message"]


def test_missing_file_is_a_parse_error(tmp_path):
    assert cli.run_scenario(tmp_path / "nope.toml", tmp_path / "out") == 2


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise SolverError("saturated")

    monkeypatch.setattr(cli, "solve_value", boom)
    out = tmp_path / "out"
    assert cli.run_scenario(_write(tmp_path, SMALL), out) == 4
    assert json.loads((out / "error.json").read_text())["error"] == "solver_error"


def test_invariant_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "grid_dpp_residual", lambda vf: 1.0)
    out = tmp_path / "out"
    assert cli.run_scenario(_write(tmp_path, SMALL), out) == 5
    assert json.loads((out / "error.json").read_text())["failed"] == ["dpp_grid_residual"]


def test_output_directory_from_environment(tmp_path):
    src = _write(tmp_path, SMALL, "env_case.toml")
    env = dict(os.environ, NETMFG_OUT=str(tmp_path / "root"))
    r = subprocess.run([sys.executable, "-m", "netmfg.cli", "run", str(src)], env=env, capture_output=True,
                       text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "root" / "env_case" / "manifest.json").is_file()
    r = subprocess.run([sys.executable, "-m", "netmfg.cli", "verify", str(tmp_path / "root" / "env_case")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["ok"]


def test_scenario_validation_messages():
    with pytest.raises(ScenarioParseError):
        parse_text("a = ")
    d = parse_text(SMALL)
    del d["m0"]
    with pytest.raises(ConfigurationError, match="m0"):
        build_scenario(d)
    d = parse_text(SMALL)
    d["costs"]["edge"] = d["costs"]["edge"][:1]
    with pytest.raises(ConfigurationError, match="costs.edge"):
        build_scenario(d)
    d = parse_text(SMALL)
    d["costs"]["p"] = 1.0
    with pytest.raises(ConfigurationError):
        build_scenario(d)


def test_decoupled_scenario_reports_zero_exploitability(tmp_path):
    out = tmp_path / "dec"
    assert cli.run_scenario(SCENARIOS / "decoupled.toml", out) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["exploitability"]["value"] == 0.0


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_scenarios_load(path):
    sc, raw = load_scenario(path)
    assert sc.name == path.stem and raw

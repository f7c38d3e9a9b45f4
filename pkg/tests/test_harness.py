import math
from pathlib import Path

import numpy as np
import pytest

from kslab.cli import main as cli_main
from kslab.dynamics import GaussianBump
from kslab.errors import ConfigError
from kslab.harness import (apply_overrides, canonical_scan_config, config_hash,
                           parse_config, parse_sweep, run_scenario,
                           serialize_config, sweep, threshold_scan)

MINIMAL = """\
# constant steady state
grid.dim = 1
grid.lx = 1.0
grid.nx = 32
sim.tau = 1.0
sim.dt_init = 0.05
sim.dt_min = 0.05
sim.dt_max = 0.05
sim.t_end = 1.0
gamma.kind = exponential
gamma.chi = 1.0
init_u.kind = constant
init_u.value = 1.0
init_v.kind = constant
init_v.value = 1.0
"""


def test_parse_minimal_and_roundtrip():
    cfg = parse_config(MINIMAL)
    assert cfg.grid.counts == (32,)
    assert cfg.family.chi == 1.0
    text = serialize_config(cfg)
    cfg2 = parse_config(text)
    assert cfg2 == cfg
    assert serialize_config(cfg2) == text
    assert config_hash(cfg2) == config_hash(cfg)


def test_parse_reports_unknown_keys_with_lines():
    bad = MINIMAL + "sim.bogus = 3\nnotasection.x = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    msgs = "\n".join(exc.value.errors)
    assert "unknown key sim.bogus" in msgs
    assert "unknown section" in msgs
    assert "line 17" in msgs or "line 18" in msgs


def test_parse_missing_family_parameter():
    bad = MINIMAL.replace("gamma.kind = exponential\ngamma.chi = 1.0",
                          "gamma.kind = algebraic")
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert any("gamma.k is required" in m for m in exc.value.errors)


def test_parse_constraint_violation():
    bad = MINIMAL.replace("sim.tau = 1.0", "sim.tau = -1")
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert any("tau must be positive" in m for m in exc.value.errors)


def test_parse_duplicate_key():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "sim.tau = 2.0\n")
    assert any("duplicate" in m for m in exc.value.errors)


def test_overrides_replace_and_append():
    text = apply_overrides(MINIMAL, ["sim.tau=2.5", "sim.seed=7"])
    cfg = parse_config(text)
    assert cfg.params.tau == 2.5
    assert cfg.seed == 7


def test_gaussian_and_noise_sections_roundtrip():
    text = MINIMAL.replace(
        "init_u.kind = constant\ninit_u.value = 1.0",
        "init_u.kind = gaussian\ninit_u.mass = 5.0\ninit_u.width_cells = 3.0")
    text = text.replace(
        "init_v.kind = constant\ninit_v.value = 1.0",
        "init_v.kind = noise\ninit_v.mean = 1.0\ninit_v.amplitude = 0.25\ninit_v.seed = 3")
    cfg = parse_config(text)
    assert isinstance(cfg.u_spec, GaussianBump)
    assert parse_config(serialize_config(cfg)) == cfg


def test_gaussian_requires_exactly_one_width():
    text = MINIMAL.replace(
        "init_u.kind = constant\ninit_u.value = 1.0",
        "init_u.kind = gaussian\ninit_u.mass = 5.0\ninit_u.width = 0.5\ninit_u.width_cells = 3.0")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert any("exactly one of width" in m for m in exc.value.errors)


def test_run_scenario_writes_artifacts(tmp_path):
    cfg = parse_config(MINIMAL + f"output.dir = {tmp_path/'out'}\noutput.save_fields = final\n")
    res = run_scenario(cfg)
    assert res.exit_code == 0
    assert (tmp_path / "out" / "diagnostics.csv").exists()
    assert (tmp_path / "out" / "summary.txt").exists()
    assert (tmp_path / "out" / "u_final.ksf").exists()
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert "status = completed" in summary
    assert "invariants_ok = True" in summary
    header = (tmp_path / "out" / "diagnostics.csv").read_text().splitlines()[0]
    assert header == ("t,dt,mass,u_min,u_max,v_min,v_max,w_min,w_max,uinf,"
                      "w_l2,w_l4,w_l8,w_l16,energy,dissipation,ratio_min,ratio_max,key_resid")


SWEEP = MINIMAL + """\
sweep.axis.init_u.value = 0.5, 1.5
sweep.axis.sim.tau = 1.0, 2.0
sweep.results = {path}
"""


def test_sweep_runs_and_resumes(tmp_path):
    path = tmp_path / "results.csv"
    sw = parse_sweep(SWEEP.format(path=path))
    assert len(sw.axes) == 2
    sweep(sw)
    rows = path.read_text().splitlines()
    assert len(rows) == 5  # header + 4 points
    assert rows[0].startswith("hash,init_u_value,sim_tau,status,verdict")

    def strip_wall(lines):
        return [",".join(r.split(",")[:-1]) for r in lines]

    first = strip_wall(rows)
    # deleting the last row simulates an interrupted sweep; the rerun must
    # reproduce exactly the missing row and leave the others untouched
    path.write_text("\n".join(rows[:-1]) + "\n")
    sweep(sw)
    second = strip_wall(path.read_text().splitlines())
    assert second == first
    # a clean rerun adds nothing
    sweep(sw)
    assert strip_wall(path.read_text().splitlines()) == first


def test_sweep_cap(tmp_path):
    text = SWEEP.format(path=tmp_path / "r.csv") + "sweep.cap = 3\n"
    with pytest.raises(ConfigError) as exc:
        parse_sweep(text)
    assert any("cap" in m for m in exc.value.errors)


def test_sweep_requires_results(tmp_path):
    with pytest.raises(ConfigError):
        parse_sweep(MINIMAL + "sweep.axis.sim.tau = 1.0, 2.0\n")


def test_threshold_scan_bisection_logic():
    # Inject a fake classifier: growing above 10, bounded below.
    def runner(mass):
        verdict = "Growing" if mass > 10.0 else "Bounded"
        return verdict, {"verdict": verdict, "log_slope": 0.02 if mass > 10 else 0.0}, None

    rep = threshold_scan(1.0, 1.0, lo=4.0, hi=16.0, depth=6, runner=runner)
    assert rep.bracket[0] <= 10.0 <= rep.bracket[1]
    assert rep.bracket[1] - rep.bracket[0] == pytest.approx(12.0 / 2**6)
    assert rep.theoretical == pytest.approx(4 * math.pi)
    assert len(rep.history) == 8


def test_threshold_scan_widen_bracket_error():
    def runner(mass):
        return "Bounded", {"verdict": "Bounded", "log_slope": 0.0}, None

    with pytest.raises(ConfigError) as exc:
        threshold_scan(1.0, 1.0, lo=4.0, hi=8.0, depth=2, runner=runner)
    assert any("widen" in m for m in exc.value.errors)


def test_canonical_scan_config_shape():
    cfg = canonical_scan_config(2.0, 1.0, 4 * math.pi)
    assert cfg.grid.counts == (128, 128)
    assert cfg.grid.lengths[0] == pytest.approx(2 * math.pi)
    assert cfg.family.chi == 2.0
    assert cfg.u_spec.mass == pytest.approx(4 * math.pi)
    assert cfg.u_spec.width_cells == 4.0


def test_cli_run_and_check(tmp_path, capsys):
    cfg_path = tmp_path / "steady.cfg"
    cfg_path.write_text(MINIMAL)
    out = tmp_path / "out"
    assert cli_main(["run", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "summary.txt").exists()
    assert cli_main(["check", str(cfg_path)]) == 0
    captured = capsys.readouterr()
    assert "mass_ok: PASS" in captured.out


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text(MINIMAL.replace("sim.tau = 1.0", "sim.tau = -3"))
    assert cli_main(["run", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
    assert "tau must be positive" in capsys.readouterr().err


def test_cli_missing_file_is_config_error(tmp_path):
    assert cli_main(["run", str(tmp_path / "nope.cfg")]) == 2


def test_cli_set_overrides(tmp_path):
    cfg_path = tmp_path / "steady.cfg"
    cfg_path.write_text(MINIMAL)
    out = tmp_path / "out"
    code = cli_main(["run", str(cfg_path), "--out", str(out),
                     "--set", "sim.t_end=0.5", "--set", "init_u.value=2.0"])
    assert code == 0
    cfg_text = (out / "config.txt").read_text()
    assert "sim.t_end = 0.5" in cfg_text
    assert "init_u.value = 2.0" in cfg_text


def test_cli_bm_check(capsys):
    code = cli_main(["bm-check", "--lambda", "1.0", "--R", str(2 * math.pi),
                     "--width", "0.3", "--n", "32"])
    assert code == 0
    out = capsys.readouterr().out
    assert "relative change" in out

"""Experiment harness: the line-based config grammar, scenario execution with
on-disk artifacts, resumable parameter sweeps, and the critical-mass scan."""

from __future__ import annotations

import csv
import hashlib
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import analysis, dynamics, motility
from .analysis import ClassifyThresholds, RunDiagnostics
from .discretization import Grid, laplacian, write_snapshot
from .dynamics import (Constant, CosinePerturbation, GaussianBump, SeededNoise,
                       SimParams, build_initial, run)
from .errors import ConfigError, KslabError, NumericalError

SECTIONS = ("grid", "sim", "gamma", "init_u", "init_v", "output")

#: key -> (type, required, default); floats parse ints too.
_GRID_KEYS = {"dim": int, "lx": float, "ly": float, "lz": float,
              "nx": int, "ny": int, "nz": int}
_SIM_KEYS = {"tau": float, "dt_init": float, "dt_min": float, "dt_max": float,
             "t_end": float, "u_cap": float, "u_cap_factor": float,
             "solver_tol": float, "record_every": int, "record_dt": float,
             "seed": int, "keep_fields": bool,
             "bounded_variation": float, "bounded_slope": float,
             "growing_slope": float, "growing_monotone": float}
_GAMMA_KEYS = {"kind": str, "chi": float, "alpha": float, "k": float, "k1": float,
               "k2": float, "a": float, "b": float, "omega": float, "c": float,
               "m": float, "s0": float, "sigma": float}
_INIT_KEYS = {"kind": str, "value": float, "mass": float, "width": float,
              "width_cells": float, "center_x": float, "center_y": float,
              "center_z": float, "mean": float, "amplitude": float, "mode": int,
              "seed": int}
_OUTPUT_KEYS = {"dir": str, "save_fields": str}

KEYS = {"grid": _GRID_KEYS, "sim": _SIM_KEYS, "gamma": _GAMMA_KEYS,
        "init_u": _INIT_KEYS, "init_v": _INIT_KEYS, "output": _OUTPUT_KEYS}

_GAMMA_PARAMS = {
    "exponential": ("chi",),
    "stretched_exponential": ("alpha",),
    "algebraic": ("k",),
    "algebraic_log": ("k1", "k2"),
    "bounded_oscillatory": ("a", "b", "omega"),
    "peaked": ("c", "m", "s0", "sigma"),
}

_INIT_PARAMS = {
    "constant": ("value",),
    "gaussian": ("mass",),  # plus exactly one of width / width_cells
    "cosine": ("mean", "amplitude"),
    "noise": ("mean", "amplitude", "seed"),
}


@dataclass(frozen=True)
class RunConfig:
    grid: Grid
    params: SimParams
    family: motility.MotilityFamily
    u_spec: dynamics.InitialData
    v_spec: dynamics.InitialData
    output_dir: str | None
    save_fields: str  # "none" | "final" | "records"
    seed: int
    thresholds: ClassifyThresholds


def parse_lines(text: str) -> dict:
    """Parse `section.key = value` lines into a {(section, key): (value, line)} map."""
    entries = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'section.key = value'")
            continue
        key_part, value = (p.strip() for p in line.split("=", 1))
        if key_part.count(".") < 1:
            errors.append(f"line {lineno}: key {key_part!r} must look like section.key")
            continue
        section, key = key_part.split(".", 1)
        if section not in KEYS:
            errors.append(f"line {lineno}: unknown section {section!r}")
            continue
        if key not in KEYS[section]:
            errors.append(f"line {lineno}: unknown key {section}.{key}")
            continue
        if (section, key) in entries:
            errors.append(f"line {lineno}: duplicate key {section}.{key}")
            continue
        entries[(section, key)] = (value, lineno)
    if errors:
        raise ConfigError(errors)
    return entries


def _convert(section, key, value, lineno, errors):
    typ = KEYS[section][key]
    try:
        if typ is bool:
            low = value.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        return value
    except ValueError:
        errors.append(f"line {lineno}: {section}.{key} expects {typ.__name__}, got {value!r}")
        return None


def _build_init(section, got, errors):
    kind = got.get("kind")
    if kind is None:
        errors.append(f"{section}.kind is required")
        return None
    if kind not in _INIT_PARAMS:
        errors.append(f"{section}.kind must be one of {sorted(_INIT_PARAMS)}")
        return None
    for p in _INIT_PARAMS[kind]:
        if p not in got:
            errors.append(f"{section}.{p} is required for kind {kind!r}")
    if errors:
        return None
    try:
        if kind == "constant":
            return Constant(got["value"])
        if kind == "gaussian":
            if ("width" in got) == ("width_cells" in got):
                errors.append(f"{section}: give exactly one of width / width_cells")
                return None
            center = None
            if any(f"center_{ax}" in got for ax in "xyz"):
                center = tuple(got[f"center_{ax}"] for ax in "xyz" if f"center_{ax}" in got)
            return GaussianBump(got["mass"], got.get("width"), got.get("width_cells"), center)
        if kind == "cosine":
            return CosinePerturbation(got["mean"], got["amplitude"], got.get("mode", 1))
        return SeededNoise(got["mean"], got["amplitude"], got["seed"])
    except (ConfigError, KslabError) as exc:
        errors.append(f"{section}: {exc}")
        return None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run config; raises ConfigError listing every problem."""
    entries = parse_lines(text)
    errors = []
    got = {s: {} for s in SECTIONS}
    for (section, key), (value, lineno) in entries.items():
        conv = _convert(section, key, value, lineno, errors)
        if conv is not None:
            got[section][key] = conv
    if errors:
        raise ConfigError(errors)

    g = got["grid"]
    dim = g.get("dim")
    if dim not in (1, 2, 3):
        errors.append("grid.dim must be 1, 2 or 3")
    else:
        axes = "xyz"[:dim]
        missing = [f"grid.{p}{ax}" for ax in axes for p in ("l", "n")
                   if f"{p}{ax}" not in g]
        extra = [f"grid.{p}{ax}" for ax in "xyz"[dim:] for p in ("l", "n")
                 if f"{p}{ax}" in g]
        errors.extend(f"{k} is required for dim={dim}" for k in missing)
        errors.extend(f"{k} not allowed for dim={dim}" for k in extra)
    grid = None
    if not errors:
        try:
            grid = Grid(tuple(g[f"l{ax}"] for ax in "xyz"[:dim]),
                        tuple(g[f"n{ax}"] for ax in "xyz"[:dim]))
        except KslabError as exc:
            errors.append(f"grid: {exc}")

    gm = got["gamma"]
    kind = gm.get("kind")
    family = None
    if kind is None or kind not in _GAMMA_PARAMS:
        errors.append(f"gamma.kind must be one of {sorted(_GAMMA_PARAMS)}")
    else:
        missing = [p for p in _GAMMA_PARAMS[kind] if p not in gm]
        extra = [k for k in gm if k != "kind" and k not in _GAMMA_PARAMS[kind]]
        errors.extend(f"gamma.{p} is required for kind {kind!r}" for p in missing)
        errors.extend(f"gamma.{k} not allowed for kind {kind!r}" for k in extra)
        if not missing and not extra:
            try:
                family = motility.CLASS_BY_KIND[kind](*(gm[p] for p in _GAMMA_PARAMS[kind]))
            except KslabError as exc:
                errors.append(f"gamma: {exc}")

    sm = dict(got["sim"])
    if "tau" not in sm:
        errors.append("sim.tau is required")
    thresholds = ClassifyThresholds(
        sm.pop("bounded_variation", 0.05), sm.pop("bounded_slope", 1e-3),
        sm.pop("growing_slope", 1e-2), sm.pop("growing_monotone", 0.9))
    seed = sm.pop("seed", 0)
    params = None
    if "tau" in got["sim"]:
        if "record_dt" in sm:
            sm.setdefault("record_every", None)
            if sm["record_every"] is not None:
                errors.append("sim.record_every and sim.record_dt are mutually exclusive")
                sm.pop("record_dt")
        try:
            params = SimParams(**sm)
        except (TypeError, KslabError) as exc:
            errors.append(f"sim: {exc}")

    u_spec = _build_init("init_u", got["init_u"], errors)
    v_spec = _build_init("init_v", got["init_v"], errors)

    out = got["output"]
    save_fields = out.get("save_fields", "none")
    if save_fields not in ("none", "final", "records"):
        errors.append("output.save_fields must be none, final or records")

    if errors:
        raise ConfigError(errors)
    return RunConfig(grid, params, family, u_spec, v_spec,
                     out.get("dir"), save_fields, seed, thresholds)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(parse(text))) == parse(text)."""
    lines = []
    lines.append(f"grid.dim = {cfg.grid.dim}")
    for ax, L, n in zip("xyz", cfg.grid.lengths, cfg.grid.counts):
        lines.append(f"grid.l{ax} = {L!r}")
        lines.append(f"grid.n{ax} = {n}")
    p = cfg.params
    lines.append(f"sim.tau = {p.tau!r}")
    lines.append(f"sim.dt_init = {p.dt_init!r}")
    lines.append(f"sim.dt_min = {p.dt_min!r}")
    lines.append(f"sim.dt_max = {p.dt_max!r}")
    lines.append(f"sim.t_end = {p.t_end!r}")
    if p.u_cap is not None:
        lines.append(f"sim.u_cap = {p.u_cap!r}")
    lines.append(f"sim.u_cap_factor = {p.u_cap_factor!r}")
    lines.append(f"sim.solver_tol = {p.solver_tol!r}")
    if p.record_every is not None:
        lines.append(f"sim.record_every = {p.record_every}")
    else:
        lines.append(f"sim.record_dt = {p.record_dt!r}")
    lines.append(f"sim.keep_fields = {'true' if p.keep_fields else 'false'}")
    lines.append(f"sim.seed = {cfg.seed}")
    th = cfg.thresholds
    lines.append(f"sim.bounded_variation = {th.bounded_variation!r}")
    lines.append(f"sim.bounded_slope = {th.bounded_slope!r}")
    lines.append(f"sim.growing_slope = {th.growing_slope!r}")
    lines.append(f"sim.growing_monotone = {th.growing_monotone!r}")
    lines.append(f"gamma.kind = {cfg.family.kind}")
    for key in _GAMMA_PARAMS[cfg.family.kind]:
        lines.append(f"gamma.{key} = {getattr(cfg.family, key)!r}")
    for section, spec in (("init_u", cfg.u_spec), ("init_v", cfg.v_spec)):
        lines.extend(_serialize_init(section, spec))
    if cfg.output_dir is not None:
        lines.append(f"output.dir = {cfg.output_dir}")
    lines.append(f"output.save_fields = {cfg.save_fields}")
    return "\n".join(lines) + "\n"


def _serialize_init(section, spec):
    if isinstance(spec, Constant):
        return [f"{section}.kind = constant", f"{section}.value = {spec.value!r}"]
    if isinstance(spec, GaussianBump):
        lines = [f"{section}.kind = gaussian", f"{section}.mass = {spec.mass!r}"]
        if spec.width is not None:
            lines.append(f"{section}.width = {spec.width!r}")
        else:
            lines.append(f"{section}.width_cells = {spec.width_cells!r}")
        if spec.center is not None:
            for ax, c in zip("xyz", spec.center):
                lines.append(f"{section}.center_{ax} = {c!r}")
        return lines
    if isinstance(spec, CosinePerturbation):
        return [f"{section}.kind = cosine", f"{section}.mean = {spec.mean!r}",
                f"{section}.amplitude = {spec.amplitude!r}",
                f"{section}.mode = {spec.mode}"]
    return [f"{section}.kind = noise", f"{section}.mean = {spec.mean!r}",
            f"{section}.amplitude = {spec.amplitude!r}", f"{section}.seed = {spec.seed}"]


def config_hash(cfg: RunConfig) -> str:
    text = serialize_config(replace(cfg, output_dir=None))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def apply_overrides(text: str, overrides) -> str:
    """Apply `section.key=value` strings on top of config text (replace or append)."""
    lines = text.splitlines()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError([f"override {item!r} must look like section.key=value"])
        target, value = (p.strip() for p in item.split("=", 1))
        replaced = False
        for i, raw in enumerate(lines):
            body = raw.split("#", 1)[0]
            if "=" in body and body.split("=", 1)[0].strip() == target:
                lines[i] = f"{target} = {value}"
                replaced = True
                break
        if not replaced:
            lines.append(f"{target} = {value}")
    return "\n".join(lines) + "\n"


# -- scenario execution -------------------------------------------------------

HARD_RESID_FACTOR = 50.0
MASS_DRIFT_LIMIT = 1e-10
NEG_U_LIMIT = -1e-12


@dataclass
class ScenarioResult:
    exit_code: int
    summary: dict
    result: "dynamics.RunResult | None"
    out_dir: Path | None


def execute(cfg: RunConfig) -> "dynamics.RunResult":
    """Run the configured scenario in memory (no artifacts)."""
    L = laplacian(cfg.grid)
    u0, v0 = build_initial(cfg.grid, cfg.u_spec, cfg.v_spec, cfg.seed)
    return run(cfg.grid, L, cfg.family, cfg.params, u0, v0)


def evaluate(cfg: RunConfig, result: "dynamics.RunResult") -> dict:
    """Post-run summary: classification, invariant verdicts, fitted constants."""
    diag = result.diag
    t = diag.column("t")
    mass = diag.column("mass")
    drift = float(np.max(np.abs(mass - mass[0])) / abs(mass[0]))
    key_resid = diag.column("key_resid")
    uinf = diag.column("uinf")
    finite = np.isfinite(key_resid)
    resid_ok = bool(np.all(key_resid[finite] <=
                           HARD_RESID_FACTOR * max(cfg.params.solver_tol, 1e-12)
                           * np.maximum(uinf[finite], 1e-300)))
    u_min_run = float(diag.column("u_min").min())
    v_min_run = float(diag.column("v_min").min())
    cls = analysis.classify_run(t, uinf, cfg.thresholds)
    ratio = analysis.two_sided_ratio(diag)
    ladder = analysis.lp_ladder(diag) if len(diag) >= 1 else None

    margins = np.asarray(diag.extras["envelope_margin"], dtype=float)
    envelope_slack = margins - result.gamma_star_obs * t
    envelope_ok = bool(np.all(envelope_slack <= math.log1p(1e-6)))

    summary = {
        "status": result.status,
        "n_steps": result.n_steps,
        "n_records": len(diag),
        "verdict": cls.verdict,
        "log_slope": cls.log_slope,
        "monotone_fraction": cls.monotone_fraction,
        "rel_variation": cls.rel_variation,
        "mass_initial": float(mass[0]),
        "mass_drift_rel": drift,
        "mass_ok": drift <= MASS_DRIFT_LIMIT,
        "u_min_run": u_min_run,
        "positivity_ok": u_min_run >= NEG_U_LIMIT and v_min_run > 0.0,
        "v_min_run": v_min_run,
        "v_min_final": float(diag.column("v_min")[-1]),
        "key_resid_max": float(np.max(key_resid[finite])) if finite.any() else 0.0,
        "key_identity_ok": resid_ok,
        "gamma_star_obs": result.gamma_star_obs,
        "envelope_ok": envelope_ok,
        "envelope_slack_max": float(np.max(envelope_slack)),
        "a_est": ratio.a_est,
        "b_est": ratio.b_est,
        "ratio_trend": ratio.trend,
        "vgrad_inf_final": float(diag.extras["vgrad_inf"][-1]),
        "bounded_variation": cfg.thresholds.bounded_variation,
        "bounded_slope": cfg.thresholds.bounded_slope,
        "growing_slope": cfg.thresholds.growing_slope,
        "growing_monotone": cfg.thresholds.growing_monotone,
    }
    if ladder is not None and not ladder.inconclusive:
        for lv in ladder.levels:
            summary[f"ladder_sup_p{lv.p}"] = lv.sup
            summary[f"ladder_slope_p{lv.p}"] = lv.slope
    if check_a1(cfg.family, cfg.params.tau) and len(diag) >= 8:
        try:
            en = analysis.energy_inequality_check(diag)
            summary["energy_c_cal"] = en.c_cal
            summary["energy_validation_ratio"] = en.worst_validation_ratio
            summary["energy_ok"] = en.ok
        except KslabError:
            summary["energy_ok"] = "skipped"
    else:
        summary["energy_ok"] = "skipped"
    summary["invariants_ok"] = bool(summary["mass_ok"] and summary["positivity_ok"]
                                    and resid_ok)
    return summary


def check_a1(family, tau) -> bool:
    return motility.check_assumption(family, "A1", tau=tau).holds


def write_summary(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(summary):
            value = summary[key]
            if isinstance(value, float):
                value = repr(value)
            fh.write(f"{key} = {value}\n")


def read_summary(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                k, v = (p.strip() for p in line.split("=", 1))
                out[k] = v
    return out


def run_scenario(cfg: RunConfig, out_dir=None) -> ScenarioResult:
    """Execute a config and write diagnostics.csv / summary.txt / snapshots.

    Exit codes: 0 all hard invariants held, 1 invariant failure,
    3 the run terminated on a solver breakdown (blow-up suspected).
    """
    out = Path(out_dir or cfg.output_dir or default_output_dir("run"))
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = execute(cfg)
    except NumericalError as exc:
        summary = {"status": "solver_error", "error": str(exc), "invariants_ok": False}
        write_summary(out / "summary.txt", summary)
        return ScenarioResult(3, summary, None, out)
    summary = evaluate(cfg, result)
    result.diag.to_csv(out / "diagnostics.csv")
    (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
    if cfg.save_fields in ("final", "records"):
        write_snapshot(out / "u_final.ksf", cfg.grid, result.state.u)
        write_snapshot(out / "v_final.ksf", cfg.grid, result.state.v)
    if cfg.save_fields == "records" and result.fields:
        for i, (_, u, _v, _w) in enumerate(result.fields):
            write_snapshot(out / f"u_{i:06d}.ksf", cfg.grid, u)
    write_summary(out / "summary.txt", summary)
    if result.status == dynamics.BLOWUP_SUSPECTED:
        code = 3
    elif not summary["invariants_ok"]:
        code = 1
    else:
        code = 0
    return ScenarioResult(code, summary, result, out)


def default_output_dir(stem: str) -> Path:
    root = os.environ.get("KSLAB_OUTPUT_ROOT", "runs")
    return Path(root) / stem


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    template: str            # config text without sweep.* lines
    axes: tuple              # ((section.key, (values...)), ...) in file order
    width: int
    results: str
    cap: int


def parse_sweep(text: str) -> SweepConfig:
    axes = []
    width, cap, results = 1, 10_000, None
    template_lines = []
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body.startswith("sweep."):
            template_lines.append(raw)
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected sweep key = value")
            continue
        key_part, value = (p.strip() for p in body.split("=", 1))
        key = key_part[len("sweep."):]
        if key == "width":
            width = int(value)
        elif key == "cap":
            cap = int(value)
        elif key == "results":
            results = value
        elif key.startswith("axis."):
            target = key[len("axis."):]
            section = target.split(".", 1)[0]
            if section not in SECTIONS:
                errors.append(f"line {lineno}: unknown axis section {section!r}")
                continue
            values = tuple(v.strip() for v in value.split(",") if v.strip())
            if not values:
                errors.append(f"line {lineno}: axis {target} has no values")
                continue
            axes.append((target, values))
        else:
            errors.append(f"line {lineno}: unknown sweep key {key!r}")
    if results is None:
        errors.append("sweep.results is required")
    if width < 1:
        errors.append("sweep.width must be >= 1")
    if errors:
        raise ConfigError(errors)
    template = "\n".join(template_lines) + "\n"
    size = int(np.prod([len(v) for _, v in axes])) if axes else 1
    if size > cap:
        raise ConfigError([f"sweep has {size} points, cap is {cap}"])
    parse_config(apply_overrides(template, [f"{k}={v[0]}" for k, v in axes]))
    return SweepConfig(template, tuple(axes), width, results, cap)


SWEEP_FIXED_COLUMNS = ("hash", "status", "verdict", "log_slope", "monotone_fraction",
                       "rel_variation", "a_est", "b_est", "mass_drift_rel",
                       "invariants_ok", "error")
WALL_COLUMN = "wall_s"


def _sweep_points(sw: SweepConfig):
    from itertools import product
    names = [k for k, _ in sw.axes]
    for combo in product(*(v for _, v in sw.axes)):
        overrides = [f"{k}={val}" for k, val in zip(names, combo)]
        cfg = parse_config(apply_overrides(sw.template, overrides))
        yield combo, cfg


def _run_point(args):
    combo, cfg = args
    t0 = time.perf_counter()
    row = {}
    try:
        result = execute(cfg)
        summary = evaluate(cfg, result)
        row.update(status=summary["status"], verdict=summary["verdict"],
                   log_slope=summary["log_slope"],
                   monotone_fraction=summary["monotone_fraction"],
                   rel_variation=summary["rel_variation"],
                   a_est=summary["a_est"], b_est=summary["b_est"],
                   mass_drift_rel=summary["mass_drift_rel"],
                   invariants_ok=summary["invariants_ok"], error="")
    except KslabError as exc:
        row.update(status="error", verdict="", log_slope=math.nan,
                   monotone_fraction=math.nan, rel_variation=math.nan,
                   a_est=math.nan, b_est=math.nan, mass_drift_rel=math.nan,
                   invariants_ok=False, error=str(exc).replace("\n", " "))
    row[WALL_COLUMN] = time.perf_counter() - t0
    return combo, row


def sweep(sw: SweepConfig) -> Path:
    """Run the cartesian sweep, appending one CSV row per point.

    Restarting skips points whose content hash is already present, so an
    interrupted sweep resumes without duplicating or reordering rows.
    """
    results_path = Path(sw.results)
    results_path.parent.mkdir(parents=True, exist_ok=True)
    axis_names = [k.replace(".", "_") for k, _ in sw.axes]
    header = [SWEEP_FIXED_COLUMNS[0], *axis_names, *SWEEP_FIXED_COLUMNS[1:], WALL_COLUMN]
    done = set()
    if results_path.exists():
        with open(results_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            existing_header = next(reader, None)
            if existing_header is not None and existing_header != header:
                raise ConfigError([f"{results_path}: existing header does not match sweep"])
            done = {row[0] for row in reader if row}
        new_file = False
    else:
        new_file = True

    points = [(combo, cfg, config_hash(cfg)) for combo, cfg in _sweep_points(sw)]
    todo = [(combo, cfg) for combo, cfg, h in points if h not in done]
    hashes = {id(cfg): h for _, cfg, h in points}

    with open(results_path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(header)
            fh.flush()

        def emit(combo, cfg, row):
            out = [hashes[id(cfg)], *combo]
            out.extend(_fmt(row[c]) for c in SWEEP_FIXED_COLUMNS[1:])
            out.append(_fmt(row[WALL_COLUMN]))
            writer.writerow(out)
            fh.flush()

        if sw.width == 1:
            for combo, cfg in todo:
                _, row = _run_point((combo, cfg))
                emit(combo, cfg, row)
        else:
            # Submit everything, write in submission order: deterministic files.
            with ProcessPoolExecutor(max_workers=sw.width) as pool:
                futures = [(combo, cfg, pool.submit(_run_point, (combo, cfg)))
                           for combo, cfg in todo]
                for combo, cfg, fut in futures:
                    _, row = fut.result()
                    emit(combo, cfg, row)
    return results_path


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- critical-mass scan -------------------------------------------------------

CANONICAL_SIDE = 2.0 * math.pi
CANONICAL_CELLS = 128
CANONICAL_WIDTH_CELLS = 4.0
CANONICAL_V_WIDTH = 0.75
# Growth toward a concentrated state is linear in time here, so its trailing
# log-slope decays like 1/t; a horizon of 40 keeps genuinely growing runs
# well above the classifier's slope threshold while bounded runs are long flat.
CANONICAL_T_END = 40.0
CANONICAL_RECORD_DT = 0.5


def canonical_scan_config(chi: float, tau: float, mass: float,
                          overrides=None) -> RunConfig:
    """The reproducible concentrated-bump scenario used by the mass scan.

    The signal starts as a bump of the same mass with width comparable to the
    screened response of the cell bump, so the pair begins near signal
    equilibrium and the mass alone decides between spreading and aggregation.
    """
    side = CANONICAL_SIDE
    n = CANONICAL_CELLS
    text = "\n".join([
        "grid.dim = 2",
        f"grid.lx = {side!r}", f"grid.nx = {n}",
        f"grid.ly = {side!r}", f"grid.ny = {n}",
        f"sim.tau = {tau!r}",
        "sim.dt_init = 0.01",
        "sim.dt_min = 1e-7",
        "sim.dt_max = 0.1",
        f"sim.t_end = {CANONICAL_T_END!r}",
        f"sim.record_dt = {CANONICAL_RECORD_DT!r}",
        "gamma.kind = exponential",
        f"gamma.chi = {chi!r}",
        "init_u.kind = gaussian",
        f"init_u.mass = {mass!r}",
        f"init_u.width_cells = {CANONICAL_WIDTH_CELLS!r}",
        "init_v.kind = gaussian",
        f"init_v.mass = {mass!r}",
        f"init_v.width = {CANONICAL_V_WIDTH!r}",
        "output.save_fields = none",
    ])
    if overrides:
        text = apply_overrides(text, overrides)
    return parse_config(text)


@dataclass
class ScanPoint:
    mass: float
    verdict: str
    log_slope: float
    summary: dict


@dataclass
class ScanReport:
    chi: float
    tau: float
    lo: ScanPoint
    hi: ScanPoint
    bracket: tuple
    midpoint: float
    theoretical: float
    history: list
    lo_result: "dynamics.RunResult"
    hi_result: "dynamics.RunResult"
    note: str = ""


def threshold_scan(chi: float, tau: float, lo: float, hi: float, depth: int,
                   overrides=None, runner=None) -> ScanReport:
    """Bisect the bounded/growing transition mass for exponential motility.

    `runner(mass)` must return (verdict, summary, result); the default runs
    the canonical scenario.  Endpoints must classify as Bounded (lo) and
    Growing (hi), otherwise a widen-bracket error is raised.
    """
    if not (0 < lo < hi) or depth < 1:
        raise ConfigError(["need 0 < lo < hi and depth >= 1"])

    def default_runner(mass):
        cfg = canonical_scan_config(chi, tau, mass, overrides)
        result = execute(cfg)
        summary = evaluate(cfg, result)
        return summary["verdict"], summary, result

    runner = runner or default_runner
    history = []

    def probe(mass):
        verdict, summary, result = runner(mass)
        point = ScanPoint(mass, verdict, summary.get("log_slope", math.nan), summary)
        history.append(point)
        return point, result

    lo_point, lo_result = probe(lo)
    hi_point, hi_result = probe(hi)
    if lo_point.verdict != "Bounded":
        raise ConfigError([f"lower endpoint mass={lo} classified {lo_point.verdict}; "
                           "widen the bracket downward"])
    if hi_point.verdict != "Growing":
        raise ConfigError([f"upper endpoint mass={hi} classified {hi_point.verdict}; "
                           "widen the bracket upward"])
    note = ""
    b_lo, b_hi = lo, hi
    for _ in range(depth):
        mid = 0.5 * (b_lo + b_hi)
        point, _ = probe(mid)
        if point.verdict == "Growing":
            b_hi = mid
        else:
            if point.verdict == "Inconclusive":
                note = "inconclusive midpoint treated as bounded side"
            b_lo = mid
    gamma_inf = 0.0  # exponential motility vanishes at infinity
    theoretical = 4.0 * math.pi * (1.0 - tau * gamma_inf) / chi
    return ScanReport(chi, tau, lo_point, hi_point, (b_lo, b_hi),
                      0.5 * (b_lo + b_hi), theoretical, history,
                      lo_result, hi_result, note)

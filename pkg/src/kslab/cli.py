"""Command-line surface: run / check / sweep / scan-threshold / bm-check.

Exit codes: 0 success, 1 invariant failure, 2 configuration error,
3 runtime/solver error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .analysis import brezis_merle_check
from .discretization import Grid
from .dynamics import GaussianBump
from .errors import ConfigError, KslabError


def _add_set(parser):
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kslab",
                                     description="Chemotaxis-with-motility numerical laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write its artifacts")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=None, help="output directory")
    _add_set(p_run)

    p_check = sub.add_parser("check", help="invariant suite only, short horizon")
    p_check.add_argument("config", type=Path)
    p_check.add_argument("--horizon", type=float, default=2.0)
    _add_set(p_check)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep (resumable)")
    p_sweep.add_argument("config", type=Path)
    _add_set(p_sweep)

    p_scan = sub.add_parser("scan-threshold", help="bisect the bounded/growing mass")
    p_scan.add_argument("--chi", type=float, required=True)
    p_scan.add_argument("--tau", type=float, required=True)
    p_scan.add_argument("--lo", type=float, required=True)
    p_scan.add_argument("--hi", type=float, required=True)
    p_scan.add_argument("--depth", type=int, default=4)
    p_scan.add_argument("--out", type=Path, default=None)
    _add_set(p_scan)

    p_bm = sub.add_parser("bm-check", help="exponential integrability refinement check")
    p_bm.add_argument("--lambda", dest="lam", type=float, required=True, help="mass of f")
    p_bm.add_argument("--R", dest="big_r", type=float, required=True)
    p_bm.add_argument("--width", type=float, default=None, help="bump width (physical)")
    p_bm.add_argument("--width-cells", type=float, default=None,
                      help="bump width in cells; tracks the grid under refinement")
    p_bm.add_argument("--n", type=int, default=128)
    p_bm.add_argument("--side", type=float, default=2.0 * math.pi)
    return parser


def _load_config(path: Path, overrides):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"])
    return harness.parse_config(harness.apply_overrides(text, overrides))


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.overrides)
    out = args.out or cfg.output_dir or harness.default_output_dir(args.config.stem)
    res = harness.run_scenario(cfg, out_dir=out)
    print(f"status = {res.summary.get('status')}")
    print(f"verdict = {res.summary.get('verdict', 'n/a')}")
    print(f"invariants_ok = {res.summary.get('invariants_ok')}")
    print(f"artifacts in {res.out_dir}")
    return res.exit_code


def cmd_check(args) -> int:
    cfg = _load_config(args.config, args.overrides)
    horizon = min(cfg.params.t_end, args.horizon)
    text = harness.serialize_config(cfg)
    cfg = harness.parse_config(harness.apply_overrides(
        text, [f"sim.t_end={horizon!r}", "sim.record_every=1"]))
    result = harness.execute(cfg)
    summary = harness.evaluate(cfg, result)
    ok = True
    for name in ("mass_ok", "positivity_ok", "key_identity_ok"):
        passed = bool(summary[name])
        ok &= passed
        print(f"{name}: {'PASS' if passed else 'FAIL'}")
    print(f"mass_drift_rel = {summary['mass_drift_rel']:.3e}")
    print(f"key_resid_max = {summary['key_resid_max']:.3e}")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {args.config}: {exc}"])
    for item in args.overrides:
        text = harness.apply_overrides(text, [item])
    sw = harness.parse_sweep(text)
    path = harness.sweep(sw)
    print(f"results in {path}")
    return 0


def cmd_scan(args) -> int:
    report = harness.threshold_scan(args.chi, args.tau, args.lo, args.hi,
                                    args.depth, overrides=args.overrides)
    print(f"endpoints: mass={report.lo.mass:.6g} -> {report.lo.verdict}, "
          f"mass={report.hi.mass:.6g} -> {report.hi.verdict}")
    print(f"bracket after depth {args.depth}: "
          f"[{report.bracket[0]:.6g}, {report.bracket[1]:.6g}]")
    print(f"bracket midpoint = {report.midpoint:.6g}")
    print(f"theoretical reference 4*pi*(1 - tau*gamma_inf)/chi = {report.theoretical:.6g}")
    if report.note:
        print(f"note: {report.note}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        lines = {f"probe_{i}_mass": p.mass for i, p in enumerate(report.history)}
        lines.update({f"probe_{i}_verdict": p.verdict for i, p in enumerate(report.history)})
        lines.update(bracket_lo=report.bracket[0], bracket_hi=report.bracket[1],
                     midpoint=report.midpoint, theoretical=report.theoretical,
                     chi=report.chi, tau=report.tau)
        harness.write_summary(args.out / "scan.txt", lines)
    return 0


def cmd_bm(args) -> int:
    if (args.width is None) == (args.width_cells is None):
        raise ConfigError(["give exactly one of --width / --width-cells"])
    grid = Grid((args.side, args.side), (args.n, args.n))

    def make_field(g: Grid):
        if args.width is not None:
            bump = GaussianBump(args.lam, width=args.width)
        else:
            bump = GaussianBump(args.lam, width_cells=args.width_cells)
        return bump.build(g)

    report = brezis_merle_check(make_field, grid, args.big_r)
    print(f"lambda = {report.coarse.lam:.6g}, R = {args.big_r:.6g}, "
          f"R*lambda/(4*pi) = {args.big_r * report.coarse.lam / (4 * math.pi):.4g}")
    print(f"value at {args.n}^2: {report.coarse.value:.6g} (log {report.coarse.log_value:.4f})")
    print(f"value at {2 * args.n}^2: {report.fine.value:.6g} (log {report.fine.log_value:.4f})")
    print(f"relative change under refinement: {report.rel_change:+.4%}")
    return 0


COMMANDS = {"run": cmd_run, "check": cmd_check, "sweep": cmd_sweep,
            "scan-threshold": cmd_scan, "bm-check": cmd_bm}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except KslabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command line: ksplot timeseries|heatmap|phase <inputs> -o <out.png>."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import plot_field, plot_phase, plot_timeseries
from .io import FormatError


def build_parser():
    parser = argparse.ArgumentParser(prog="ksplot",
                                     description="Render simulator CSV/snapshot outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ts = sub.add_parser("timeseries", help="diagnostics columns vs time")
    p_ts.add_argument("csv", type=Path)
    p_ts.add_argument("--columns", default="uinf",
                      help="comma-separated diagnostics columns (default: uinf)")
    p_ts.add_argument("--logy", action="store_true")
    p_ts.add_argument("-o", "--out", type=Path, required=True)

    p_hm = sub.add_parser("heatmap", help="field snapshot heatmap")
    p_hm.add_argument("snapshot", type=Path)
    p_hm.add_argument("-o", "--out", type=Path, required=True)

    p_ph = sub.add_parser("phase", help="sweep phase diagram colored by verdict")
    p_ph.add_argument("csv", type=Path)
    p_ph.add_argument("--x", default="gamma_chi")
    p_ph.add_argument("--y", default="init_u_mass")
    p_ph.add_argument("-o", "--out", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "timeseries":
            columns = [c.strip() for c in args.columns.split(",") if c.strip()]
            if not columns:
                print("error: no columns selected", file=sys.stderr)
                return 2
            plot_timeseries(args.csv, columns, args.out, logy=args.logy)
        elif args.command == "heatmap":
            plot_field(args.snapshot, args.out)
        else:
            plot_phase(args.csv, args.x, args.y, args.out)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

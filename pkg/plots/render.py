#!/usr/bin/env python3
"""Render a figure from experiment CSV output.

    plots/render.py --figure <id> --in <csv> [--in <csv> ...] --out <file>

Figure ids: quotes, quotes_gamma_diff, filter, perf_sweep, spread,
fd_comparison, ctmc.  Input CSV schemas are documented in FORMATS.md.
Rendering is read-only and deterministic for fixed inputs.
"""

from __future__ import annotations

import argparse
import os
import sys

if __package__ in (None, ""):
    sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
    from figures import RENDERERS, SchemaError
else:
    from .figures import RENDERERS, SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="render.py")
    parser.add_argument("--figure", required=True, choices=sorted(RENDERERS))
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        help="input CSV (repeat for multi-panel figures)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args(argv)
    try:
        for path in args.inputs:
            if not os.path.isfile(path):
                raise SchemaError(f"input not found: {path}")
        RENDERERS[args.figure](args.inputs, args.out, args.dpi)
    except SchemaError as exc:
        print(f"render.py: schema error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

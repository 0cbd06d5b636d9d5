#!/usr/bin/env python3
"""
stratahj - Hamilton-Jacobi solvers on a junction

Usage:
    python stratahj.py solve --config configs/giga_hamamuki.json
    python stratahj.py value --config configs/one_d_gap_regular.json --dx 0.01
    python stratahj.py vanish --config configs/one_d_gap_viscous.json
    python stratahj.py kpp [--config configs/kpp.json]
    python stratahj.py cell [--config configs/cell.json]
    python stratahj.py verify --suite all
    python stratahj.py presets
"""

import argparse
import logging
import sys
from dataclasses import replace

from applications import preset_catalog
from cli_io import RunConfig, SchemeSpec, load_config, run, verify
from solver_errors import StrataError

COMMAND_KINDS = {
    'value': 'value_iteration',
    'vanish': 'viscous',
    'kpp': 'kpp',
    'cell': 'cell',
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Hamilton-Jacobi equations on a junction: flux-limited, Kirchhoff, "
                    "dynamic programming and vanishing viscosity solvers")
    sub = parser.add_subparsers(dest='command', required=True)

    for name, help_text in (('solve', "finite-difference junction scheme from a run document"),
                            ('value', "semi-Lagrangian dynamic programming"),
                            ('vanish', "vanishing viscosity approximation"),
                            ('kpp', "KPP front propagation with a jump in the reaction rate"),
                            ('cell', "effective Hamiltonian of the fast-line cell problem")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument('--config', required=name not in ('kpp', 'cell'),
                         help="JSON run document")
        cmd.add_argument('--dx', type=float, help="override grid.dx")
        cmd.add_argument('--horizon', type=float, help="override the final time")
        cmd.add_argument('--out', help="override outputs.directory")
        cmd.add_argument('--strict', action='store_true', help="reject unknown keys")
        cmd.add_argument('--verbose', action='store_true', help="debug logging")

    check = sub.add_parser('verify', help="run the acceptance suites")
    check.add_argument('--suite', choices=('core', 'examples', 'all'), default='all')
    check.add_argument('--threads', type=int, help="worker threads (default STRATAHJ_THREADS)")
    check.add_argument('--verbose', action='store_true', help="debug logging")

    sub.add_parser('presets', help="list the built-in problems")
    return parser


def config_for(args) -> RunConfig:
    kind = COMMAND_KINDS.get(args.command)
    if args.config:
        config = load_config(args.config, args.strict)
    else:
        config = RunConfig(scheme=SchemeSpec(kind=kind))
    if kind is not None and config.scheme.kind != kind:
        config = replace(config, scheme=replace(config.scheme, kind=kind))
    if args.dx is not None:
        config = replace(config, grid=replace(config.grid, dx=args.dx))
    if args.horizon is not None:
        config = replace(config, horizon=args.horizon)
    if args.out is not None:
        config = replace(config, outputs=replace(config.outputs, directory=args.out))
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, 'verbose', False) else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')

    if args.command == 'presets':
        print("📦 Built-in problems")
        print("=" * 50)
        for name, description in preset_catalog():
            print(f"  {name:16s} {description}")
        return 0

    try:
        if args.command == 'verify':
            return verify(args.suite, args.threads)
        result = run(config_for(args))
    except (StrataError, OSError) as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return 1

    for key, value in result.summary.items():
        print(f"  {key}: {value:.6g}")
    if result.failures:
        for failure in result.failures:
            print(f"❌ {failure}", file=sys.stderr)
        print(f"❌ {args.command} finished with {len(result.failures)} failed gate(s), "
              f"{len(result.files)} file(s) written")
        return 1
    print(f"✅ {args.command} finished, {len(result.files)} file(s) written")
    return 0


if __name__ == "__main__":
    sys.exit(main())

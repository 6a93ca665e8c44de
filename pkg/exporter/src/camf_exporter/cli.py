"""Command line: export a recipe, verify a bundle against the engine."""

from __future__ import annotations

import argparse
import sys

from .recipes import RECIPES, UnsupportedLayerError
from .verify import verify_bundle


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camf-export",
        description="Convert source CNN checkpoints to .camf and verify them",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("export", help="write a .camf file plus its reference bundle")
    ex.add_argument("--recipe", choices=RECIPES, required=True)
    ex.add_argument("--out-dir", required=True)
    ex.add_argument("--weights", choices=("random", "pretrained"), default="random",
                    help="pretrained needs a cached checkpoint; random is seeded")
    ex.add_argument("--seed", type=int, default=1234)

    ve = sub.add_parser("verify", help="compare source logits with engine logits")
    ve.add_argument("--bundle", required=True, help="directory written by export")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "export":
        from .export import export_model

        try:
            bundle = export_model(args.recipe, args.out_dir,
                                  weights_mode=args.weights, seed=args.seed)
        except (UnsupportedLayerError, RuntimeError, ValueError) as exc:
            print(f"export failed: {exc}", file=sys.stderr)
            return 1
        print(f"exported {bundle['recipe']} ({bundle['weights_mode']} weights) "
              f"to {args.out_dir}")
        return 0

    result = verify_bundle(args.bundle)
    print(f"verify: {result.status}")
    print(result.message)
    return result.exit_code


def run() -> None:
    raise SystemExit(main())

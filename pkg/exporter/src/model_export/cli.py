"""CLI for exporting vision models to probing bundles.

    export_models.py --model resnet152 --out bundles/ [--verify 10]
                     [--weights path.pth] [--seed 0]
    export_models.py --list
"""

from __future__ import annotations

import argparse
import json
import sys

from .export import export, verify_roundtrip
from .recipes import RECIPES, get_recipe


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="export_models.py",
                                description="Convert vision models to probing bundles")
    p.add_argument("--model", help="recipe name (see --list)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--weights", default=None,
                   help="optional local checkpoint (.pth state dict)")
    p.add_argument("--seed", type=int, default=0,
                   help="init seed when no checkpoint is given")
    p.add_argument("--verify", type=int, default=0, metavar="N",
                   help="round-trip check on N random images after export")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--list", action="store_true", help="list available recipes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.list:
        for name in sorted(RECIPES):
            r = RECIPES[name]
            print(f"{name}: source={r.source} input={r.input_size}")
        return 0
    if not args.model or not args.out:
        print("--model and --out are required (or use --list)", file=sys.stderr)
        return 2
    recipe = get_recipe(args.model)
    bundle, model, info = export(recipe, args.out, weights_path=args.weights,
                                 seed=args.seed)
    print(f"exported {bundle}")
    if args.verify:
        overall, report = verify_roundtrip(bundle, model, info,
                                           n_images=args.verify, seed=args.seed,
                                           tolerance=args.tolerance)
        print(json.dumps(report, indent=2))
        if not report["passed"]:
            print(f"verification FAILED: {overall:.3g} > {args.tolerance:.3g}",
                  file=sys.stderr)
            return 1
        print(f"round-trip max deviation {overall:.3g} (tolerance {args.tolerance:.3g})")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

    gestalt-probe run --config experiments.json [--workers N]
    gestalt-probe plot RESULTS_DIR
    gestalt-probe gen --ef proximity --out stimuli/ [--n 10] [--style ...]
    gestalt-probe train --task proximity3 --out runs/prox [...]

`run` exits 0 only when every grid cell succeeded or was skipped as not
applicable. The environment variable GESTALT_PROBE_SEED overrides the seed
in the config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .canvas import Polarity, RenderStyle, write_png
from .dots import EFKind, EFSetSpec, Task, export_dataset, gen_ef_sequence, gen_sanity_pairs, gen_training_dataset
from .experiment import load_config, run as run_experiments
from .figures import plot as render_figures
from .smallnet import SmallNet, TrainConfig, evaluate as eval_net, save_bundle, train as train_net


def _add_style_args(parser):
    parser.add_argument("--style", default=Polarity.WHITE_ON_BLACK.value,
                        choices=[p.value for p in Polarity])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--size", type=int, default=224)


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.workers is not None:
        config = dataclasses.replace(config, workers=args.workers)
    manifest = run_experiments(config)
    failed = [c for c in manifest["cells"] if c["status"] == "failed"]
    done = sum(1 for c in manifest["cells"] if c["status"] == "done")
    print(f"cells: {done} done, {len(failed)} failed, "
          f"{len(manifest['cells']) - done - len(failed)} skipped")
    for c in failed:
        print(f"  FAILED {c['model']}/{c['experiment']}/{c['style']}/{c['transform']}: "
              f"{c['reason']}", file=sys.stderr)
    print(f"manifest: {os.path.join(config.output_dir, 'manifest.json')}")
    return 1 if failed else 0


def _cmd_plot(args) -> int:
    written = render_figures(args.results_dir)
    for path in written:
        print(path)
    return 0


def _cmd_gen(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    style = RenderStyle(polarity=Polarity(args.style), noise_seed=args.seed)
    if args.ef == "sanity":
        for i in range(args.n):
            pairs = gen_sanity_pairs(style, args.seed + i, size=args.size)
            write_png(pairs.empty_pair.image_a, os.path.join(args.out, f"empty_{i:03d}_a.png"))
            write_png(pairs.empty_pair.image_b, os.path.join(args.out, f"empty_{i:03d}_b.png"))
            write_png(pairs.empty_vs_dot.image_b, os.path.join(args.out, f"dot_{i:03d}.png"))
        print(f"wrote {3 * args.n} canvases to {args.out}")
        return 0
    kind = EFKind(args.ef)
    for i in range(args.n):
        seq = gen_ef_sequence(EFSetSpec(kind=kind, seed=args.seed + i, style=style),
                              size=args.size)
        for tag, pair in (("base", seq.base), ("composite", seq.composite)):
            write_png(pair.image_a, os.path.join(args.out, f"{kind.value}_{i:03d}_{tag}_a.png"))
            write_png(pair.image_b, os.path.join(args.out, f"{kind.value}_{i:03d}_{tag}_b.png"))
    print(f"wrote {4 * args.n} canvases to {args.out}")
    return 0


def _cmd_train(args) -> int:
    task = Task(args.task)
    style = RenderStyle(polarity=Polarity(args.style))
    train_ds, test_ds = gen_training_dataset(
        task, args.n_train, args.n_test, seed=args.seed, size=args.size, style=style
    )
    if args.export_data:
        export_dataset(train_ds, os.path.join(args.out, "train"))
        export_dataset(test_ds, os.path.join(args.out, "test"))
    net = SmallNet(input_size=args.size, n_classes=len(train_ds.labels), seed=args.seed)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                      epochs=args.epochs, seed=args.seed)
    print(f"training {task.value}: {args.n_train} samples, {net.n_params} parameters")
    result = train_net(net, train_ds, cfg)
    acc, confusion = eval_net(net, test_ds)
    os.makedirs(args.out, exist_ok=True)
    summary = {
        "task": task.value,
        "test_accuracy": acc,
        "final_train_loss": result.history[-1].loss,
        "confusion": confusion.tolist(),
        "labels": list(train_ds.labels),
        "n_params": net.n_params,
    }
    with open(os.path.join(args.out, f"{task.value}_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    bundle = save_bundle(net, os.path.join(args.out, f"{task.value}_smallnet.onnx"),
                         name=f"smallnet_{task.value}")
    print(f"test accuracy {acc:.4f}; bundle at {bundle}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gestalt-probe",
                                     description="Configural-effect probing harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment grid from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_plot = sub.add_parser("plot", help="render SVG figures from a results directory")
    p_plot.add_argument("results_dir")
    p_plot.set_defaults(func=_cmd_plot)

    p_gen = sub.add_parser("gen", help="export generated stimulus canvases as PNGs")
    p_gen.add_argument("--ef", required=True,
                       choices=[k.value for k in EFKind if k != EFKind.BASE])
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--n", type=int, default=10)
    _add_style_args(p_gen)
    p_gen.set_defaults(func=_cmd_gen)

    p_train = sub.add_parser("train", help="train the desk-scale classifier on a banded task")
    p_train.add_argument("--task", required=True, choices=[t.value for t in Task])
    p_train.add_argument("--out", default="train_out")
    p_train.add_argument("--n-train", type=int, default=6000, dest="n_train")
    p_train.add_argument("--n-test", type=int, default=200, dest="n_test")
    p_train.add_argument("--epochs", type=int, default=20)
    p_train.add_argument("--lr", type=float, default=0.01)
    p_train.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p_train.add_argument("--export-data", action="store_true")
    p_train.add_argument("--style", default=Polarity.WHITE_ON_BLACK.value,
                         choices=[p.value for p in Polarity])
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--size", type=int, default=64)
    p_train.set_defaults(func=_cmd_train)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end experiment runner: config, grid execution, CSV/manifest output.

A run covers the grid (models x experiments x styles x transforms). Each
cell renders its stimuli at the model's declared input size, measures
per-probe pair similarities, and writes one CSV of configural effects (plus
a rank-correlation CSV against the bundled human data for the 17-set
experiment). A machine-readable manifest records config hash, seeds,
versions, and the done/skipped/failed status of every cell; CSV bytes are
deterministic given (config, seed).

Cells that an axis cannot affect run once and are marked "skipped"
elsewhere: the sanity pairs have no geometry to transform, and the
learnability probe trains the internal net from scratch regardless of
model/style/transform.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .canvas import Polarity, RenderStyle, TransformKind, TransformSpec, render_pair
from .dots import EFKind, EFSetSpec, Task, gen_ef_sequence, gen_sanity_pairs, gen_training_dataset
from .metrics import (
    CEResult,
    aggregate_sequences,
    exclusion_analysis,
    network_ce,
    pair_similarities,
    sample_valid_transform,
)
from .pomerantz import N_SETS, build_set, load_human_ce
from .runner import load_model
from .smallnet import SmallNet, TrainConfig, evaluate as eval_net, train as train_net

EXPERIMENTS = ("exp1", "exp2", "sanity", "learnability")
EF_ORDER = (EFKind.PROXIMITY, EFKind.ORIENTATION, EFKind.LINEARITY)
RESULT_HEADER = ["model", "probe", "set_or_ef", "base_sim", "composite_sim", "ce", "stderr", "n"]
CORR_HEADER = ["model", "probe", "rho", "p", "n", "excluded"]

SEED_ENV_VAR = "GESTALT_PROBE_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    models: tuple[str, ...]
    experiments: tuple[str, ...]
    output_dir: str
    styles: tuple[str, ...] = (Polarity.BLACK_ON_RANDOM.value,)
    transforms: tuple[str, ...] = (TransformKind.TRANSLATE.value,)
    repetitions: int = 100
    seed: int = 0
    workers: int = 1
    learn_n_train: int = 6000
    learn_n_test: int = 200
    learn_input_size: int = 64
    learn_tasks: tuple[str, ...] = tuple(t.value for t in Task)

    def __post_init__(self):
        if not self.experiments:
            raise ConfigError("config lists no experiments")
        bad = [e for e in self.experiments if e not in EXPERIMENTS]
        if bad:
            raise ConfigError(f"unknown experiments {bad}; valid: {list(EXPERIMENTS)}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        for s in self.styles:
            Polarity(s)
        for t in self.transforms:
            TransformKind(t)
        for t in self.learn_tasks:
            Task(t)
        if not self.styles or not self.transforms:
            raise ConfigError("styles and transforms must be nonempty")
        needs_models = set(self.experiments) - {"learnability"}
        if needs_models and not self.models:
            raise ConfigError(f"experiments {sorted(needs_models)} require model bundles")

    def canonical_dict(self) -> dict:
        return {
            "models": list(self.models),
            "experiments": list(self.experiments),
            "styles": list(self.styles),
            "transforms": list(self.transforms),
            "repetitions": self.repetitions,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "learn_n_train": self.learn_n_train,
            "learn_n_test": self.learn_n_test,
            "learn_input_size": self.learn_input_size,
            "learn_tasks": list(self.learn_tasks),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    seed = raw.get("seed", 0)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        seed = int(env)
    known = {
        "models", "experiments", "styles", "transforms", "repetitions",
        "output_dir", "workers", "learn_n_train", "learn_n_test",
        "learn_input_size", "learn_tasks",
    }
    unknown = set(raw) - known - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items() if k != "seed"}
    try:
        return ExperimentConfig(seed=int(seed), **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class Cell:
    model: str
    model_path: str
    experiment: str
    style: str
    transform: str
    indices: tuple[int, int, int, int]

    def filename(self, suffix: str = "") -> str:
        return f"{self.model}__{self.experiment}__{self.style}__{self.transform}{suffix}.csv"


@dataclass
class CellOutcome:
    cell: Cell
    status: str  # done | skipped | failed
    reason: str = ""
    outputs: list[str] = field(default_factory=list)


def _model_label(path: str) -> str:
    base = os.path.basename(path)
    return base[:-5] if base.endswith(".onnx") else base


def _cell_seed(config_seed: int, cell: Cell) -> int:
    ss = np.random.SeedSequence(
        entropy=int(config_seed) & ((1 << 64) - 1), spawn_key=cell.indices
    )
    return int(ss.generate_state(1)[0])


def _sub_seed(cell_seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(cell_seed) & ((1 << 64) - 1), spawn_key=tuple(key))
    return int(ss.generate_state(1)[0])


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def _write_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _ce_rows(model: str, results: list[CEResult]):
    for r in results:
        yield [
            model, r.probe_name, r.set_or_ef, r.base_similarity,
            r.composite_similarity, r.network_ce, r.ce_std_err, r.n_repetitions,
        ]


# ---------------------------------------------------------------------------
# Cell drivers
# ---------------------------------------------------------------------------

def _run_exp1(cell: Cell, handle, config: ExperimentConfig, out_dir: str) -> list[str]:
    cell_seed = _cell_seed(config.seed, cell)
    style = RenderStyle(polarity=Polarity(cell.style))
    spec = TransformSpec(kind=TransformKind(cell.transform))
    size = handle.meta.input_size
    results: list[CEResult] = []
    per_probe_ce: dict[str, dict[int, float]] = {}
    for set_id in range(1, N_SETS + 1):
        sset = build_set(set_id)
        sseed = _sub_seed(cell_seed, set_id)
        base = render_pair(sset.base_glyphs[0], sset.base_glyphs[1],
                           style.with_seed(_sub_seed(sseed, 1)), size)
        comp = render_pair(sset.composite_glyphs[0], sset.composite_glyphs[1],
                           base.style, size)
        ce = network_ce(
            base, comp, handle,
            repetitions=config.repetitions, transform_spec=spec,
            seed=sseed, set_or_ef=f"set_{set_id:02d}",
        )
        results.extend(ce)
        for r in ce:
            per_probe_ce.setdefault(r.probe_name, {})[set_id] = r.network_ce

    csv_path = os.path.join(out_dir, "results", cell.filename())
    _write_csv(csv_path, RESULT_HEADER, _ce_rows(cell.model, results))

    human = {rec.set_id: rec.human_ce for rec in load_human_ce()}
    corr_rows = []
    for probe in handle.meta.probe_names():
        full, excl = exclusion_analysis(per_probe_ce[probe], human, probe_name=probe)
        corr_rows.append([cell.model, probe, full.rho, full.p_value, full.n, ""])
        corr_rows.append([
            cell.model, probe, excl.rho, excl.p_value, excl.n,
            ";".join(str(i) for i in excl.excluded_sets),
        ])
    corr_path = os.path.join(out_dir, "results", cell.filename("__correlations"))
    _write_csv(corr_path, CORR_HEADER, corr_rows)
    return [csv_path, corr_path]


def _run_exp2(cell: Cell, handle, config: ExperimentConfig, out_dir: str) -> list[str]:
    cell_seed = _cell_seed(config.seed, cell)
    style = RenderStyle(polarity=Polarity(cell.style))
    spec = TransformSpec(kind=TransformKind(cell.transform))
    size = handle.meta.input_size
    probe_names = handle.meta.probe_names()
    results: list[CEResult] = []
    for kind_idx, kind in enumerate(EF_ORDER):
        base_sims = {n: [] for n in probe_names}
        comp_sims = {n: [] for n in probe_names}
        for rep in range(config.repetitions):
            seq_seed = _sub_seed(cell_seed, kind_idx, rep)
            seq = gen_ef_sequence(
                EFSetSpec(kind=kind, seed=seq_seed, style=style), size=size
            )
            base_pair, comp_pair = seq.base, seq.composite
            if spec.kind is not TransformKind.NONE:
                _t, (base_pair, comp_pair) = sample_valid_transform(
                    spec, (base_pair, comp_pair), seq_seed, rep
                )
            sims_b = pair_similarities(base_pair, handle, probe_names)
            sims_c = pair_similarities(comp_pair, handle, probe_names)
            for n in probe_names:
                base_sims[n].append(sims_b[n])
                comp_sims[n].append(sims_c[n])
        for n in probe_names:
            results.append(aggregate_sequences(kind.value, n, base_sims[n], comp_sims[n]))
    csv_path = os.path.join(out_dir, "results", cell.filename())
    _write_csv(csv_path, RESULT_HEADER, _ce_rows(cell.model, results))
    return [csv_path]


def _run_sanity(cell: Cell, handle, config: ExperimentConfig, out_dir: str) -> list[str]:
    cell_seed = _cell_seed(config.seed, cell)
    style = RenderStyle(polarity=Polarity(cell.style))
    size = handle.meta.input_size
    probe_names = handle.meta.probe_names()
    empty_sims = {n: [] for n in probe_names}
    dot_sims = {n: [] for n in probe_names}
    for rep in range(config.repetitions):
        pairs = gen_sanity_pairs(style, _sub_seed(cell_seed, rep), size=size)
        se = pair_similarities(pairs.empty_pair, handle, probe_names)
        sd = pair_similarities(pairs.empty_vs_dot, handle, probe_names)
        for n in probe_names:
            empty_sims[n].append(se[n])
            dot_sims[n].append(sd[n])
    results = [
        aggregate_sequences("sanity", n, empty_sims[n], dot_sims[n]) for n in probe_names
    ]
    csv_path = os.path.join(out_dir, "results", cell.filename())
    _write_csv(csv_path, RESULT_HEADER, _ce_rows(cell.model, results))
    return [csv_path]


def _run_learnability(cell: Cell, config: ExperimentConfig, out_dir: str) -> list[str]:
    cell_seed = _cell_seed(config.seed, cell)
    outputs = []
    summary_rows = []
    for task_idx, task_name in enumerate(config.learn_tasks):
        task = Task(task_name)
        tseed = _sub_seed(cell_seed, task_idx)
        train_ds, test_ds = gen_training_dataset(
            task, config.learn_n_train, config.learn_n_test, seed=tseed,
            size=config.learn_input_size,
        )
        n_classes = len(train_ds.labels)
        net = SmallNet(input_size=config.learn_input_size, n_classes=n_classes,
                       seed=_sub_seed(tseed, 1))
        cfg = TrainConfig(seed=_sub_seed(tseed, 2))
        history = train_net(net, train_ds, cfg)
        acc, confusion = eval_net(net, test_ds)

        loss_path = os.path.join(out_dir, "learnability", f"{task.value}__losscurve.csv")
        _write_csv(loss_path, ["epoch", "train_loss", "train_accuracy"],
                   [[e.epoch, e.loss, e.accuracy] for e in history.history])
        conf_path = os.path.join(out_dir, "learnability", f"{task.value}__confusion.csv")
        labels = train_ds.labels
        _write_csv(conf_path, ["true_label"] + [f"pred_{l}" for l in labels],
                   [[labels[i]] + confusion[i].tolist() for i in range(n_classes)])
        outputs.extend([loss_path, conf_path])
        summary_rows.append([task.value, acc, net.n_params, cfg.epochs])
    summary_path = os.path.join(out_dir, "learnability", "summary.csv")
    _write_csv(summary_path, ["task", "test_accuracy", "n_params", "epochs"], summary_rows)
    outputs.append(summary_path)
    return outputs


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

def enumerate_cells(config: ExperimentConfig) -> list[Cell]:
    cells = []
    models = list(config.models) if config.models else ["internal"]
    for mi, mpath in enumerate(models):
        label = _model_label(mpath) if config.models else "internal"
        for ei, exp in enumerate(config.experiments):
            for si, sty in enumerate(config.styles):
                for ti, tr in enumerate(config.transforms):
                    cells.append(Cell(
                        model=label, model_path=mpath, experiment=exp,
                        style=sty, transform=tr, indices=(mi, ei, si, ti),
                    ))
    return cells


def _cell_is_canonical(cell: Cell, config: ExperimentConfig) -> tuple[bool, str]:
    """Cells whose axes cannot affect the outcome run once."""
    mi, _ei, si, ti = cell.indices
    if cell.experiment == "sanity" and ti != 0:
        return False, "sanity pairs have no geometry to transform"
    if cell.experiment == "learnability" and (mi, si, ti) != (0, 0, 0):
        return False, "learnability probe is model/style/transform independent"
    return True, ""


def run(config: ExperimentConfig) -> dict:
    """Execute the grid; returns the manifest dict (also written to disk)."""
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    cells = enumerate_cells(config)

    handles: dict[str, object] = {}
    load_errors: dict[str, str] = {}
    for path in dict.fromkeys(c.model_path for c in cells if c.experiment != "learnability"):
        if path == "internal":
            continue
        try:
            handles[path] = load_model(path)
        except Exception as exc:
            load_errors[path] = str(exc)

    def execute(cell: Cell) -> CellOutcome:
        canonical, reason = _cell_is_canonical(cell, config)
        if not canonical:
            return CellOutcome(cell=cell, status="skipped", reason=reason)
        try:
            if cell.experiment == "learnability":
                outputs = _run_learnability(cell, config, out_dir)
            else:
                if cell.model_path in load_errors:
                    raise RuntimeError(f"bundle failed to load: {load_errors[cell.model_path]}")
                handle = handles[cell.model_path]
                if cell.experiment == "exp1":
                    outputs = _run_exp1(cell, handle, config, out_dir)
                elif cell.experiment == "exp2":
                    outputs = _run_exp2(cell, handle, config, out_dir)
                else:
                    outputs = _run_sanity(cell, handle, config, out_dir)
            rel = [os.path.relpath(p, out_dir) for p in outputs]
            return CellOutcome(cell=cell, status="done", outputs=rel)
        except Exception as exc:
            return CellOutcome(cell=cell, status="failed", reason=f"{type(exc).__name__}: {exc}")

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(execute, cells))
    else:
        outcomes = [execute(c) for c in cells]

    manifest = {
        "package_version": __version__,
        "config": config.canonical_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "created_unix": time.time(),
        "cells": [
            {
                "model": o.cell.model,
                "experiment": o.cell.experiment,
                "style": o.cell.style,
                "transform": o.cell.transform,
                "status": o.status,
                "reason": o.reason,
                "outputs": o.outputs,
            }
            for o in outcomes
        ],
        "probes": {
            _model_label(path): {p.name: p.kind.value for p in h.meta.probes}
            for path, h in handles.items()
        },
        "n_failed": sum(1 for o in outcomes if o.status == "failed"),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest

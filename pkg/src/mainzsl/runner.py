"""Run orchestration behind the command line: protocol loops, artifacts,
checkpoints, ablation sweeps and the gradient-check sweep."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numkit as nk
from .continual import (
    RESERVOIR_B,
    Reservoir,
    TaskStream,
    build_dynamic_stream,
    build_fixed_stream,
    build_gzsl_view,
    dataset_key,
    offer_dataset,
    reservoir_capacity,
)
from .dataio import DatasetBundle, RunConfig
from .encoder import MainModel
from .errors import ConfigError, DataError
from .evalkit import (
    MetricsReport,
    continual_metrics_dynamic,
    continual_metrics_fixed,
    evaluate_view,
    harmonic_mean,
)
from .objective import Batch, joint_loss
from .trainer import MetaState, TrainConfig, train_task

log = logging.getLogger(__name__)

SYNTH_RESERVOIR_B = 10.0
CHECKPOINT_FORMAT = "mainzsl-checkpoint/1"


@dataclass
class RunOutcome:
    config: RunConfig
    train: TrainConfig
    report: MetricsReport
    model: MainModel
    stream: TaskStream | None = None
    loss_rows: list = field(default_factory=list)  # (task, EpochTrace)
    reservoir_capacity: int = 0
    elapsed: float = 0.0


def reservoir_b(config: RunConfig, bundle: DatasetBundle) -> float:
    if config.reservoir_b is not None:
        return float(config.reservoir_b)
    if config.synth is not None:
        return SYNTH_RESERVOIR_B
    key = dataset_key(bundle)
    if key not in RESERVOIR_B:
        raise ConfigError(f"no default reservoir size for dataset {bundle.name!r}; set reservoir_b")
    return float(RESERVOIR_B[key])


def build_stream(config: RunConfig, bundle: DatasetBundle) -> TaskStream:
    if config.protocol == "fixed":
        if config.tasks is None:
            raise ConfigError("fixed protocol needs tasks")
        return build_fixed_stream(bundle, config.tasks, config.class_order_seed)
    if config.protocol == "dynamic":
        return build_dynamic_stream(bundle, config.dynamic_seen_counts, config.dynamic_unseen_counts,
                                    config.tasks, config.class_order_seed)
    return TaskStream("gzsl", [build_gzsl_view(bundle)])


def run(config: RunConfig, bundle: DatasetBundle | None = None) -> RunOutcome:
    """Train and evaluate according to ``config.protocol``."""
    t0 = time.perf_counter()
    bundle = config.load_data() if bundle is None else bundle
    tc = config.train_config()
    model = tc.build_model(bundle.attr_dim, bundle.feat_dim)
    stream = build_stream(config, bundle)
    meta = MetaState()
    loss_rows = []

    if config.protocol == "gzsl":
        view = stream.views[0]
        res = train_task(view, None, model, tc, meta)
        loss_rows += [(view.task_id, e) for e in res.trace]
        r = evaluate_view(res.model.predict, view)
        report = MetricsReport([r], r.seen_acc, r.unseen_acc, harmonic_mean(r.seen_acc, r.unseen_acc), "gzsl")
        return RunOutcome(config, tc, report, res.model, stream, loss_rows, 0, time.perf_counter() - t0)

    B = reservoir_b(config, bundle)
    n_classes = bundle.n_classes if config.protocol == "fixed" else len(bundle.seen_ids)
    memory = Reservoir(reservoir_capacity(B, n_classes))
    rng = np.random.default_rng([tc.seed, 1])
    results = []
    for view in stream.views:
        res = train_task(view, memory, model, tc, meta)
        model = res.model
        loss_rows += [(view.task_id, e) for e in res.trace]
        if view.unseen_class_ids:
            results.append(evaluate_view(model.predict, view))
        offer_dataset(memory, view.train_set, bundle.attributes, rng)
        log.info("task %d/%d done, reservoir %d/%d", view.task_id, stream.K, len(memory), memory.capacity)
    if config.protocol == "fixed":
        report = continual_metrics_fixed(results, stream.K)
    else:
        report = continual_metrics_dynamic(results, stream.K)
    return RunOutcome(config, tc, report, model, stream, loss_rows, memory.capacity, time.perf_counter() - t0)


def rescore(config: RunConfig, model: MainModel, bundle: DatasetBundle | None = None) -> MetricsReport:
    """Evaluate a trained model on every evaluation view of the configured protocol."""
    bundle = config.load_data() if bundle is None else bundle
    if (bundle.attr_dim, bundle.feat_dim) != (model.encoder.attr_dim, model.encoder.feat_dim):
        raise DataError(
            f"checkpoint expects D={model.encoder.attr_dim}, d={model.encoder.feat_dim}; "
            f"data has D={bundle.attr_dim}, d={bundle.feat_dim}"
        )
    stream = build_stream(config, bundle)
    results = [evaluate_view(model.predict, v) for v in stream.views if v.unseen_class_ids]
    if config.protocol == "gzsl":
        r = results[0]
        return MetricsReport([r], r.seen_acc, r.unseen_acc, harmonic_mean(r.seen_acc, r.unseen_acc), "gzsl")
    if config.protocol == "fixed":
        return continual_metrics_fixed(results, stream.K)
    return continual_metrics_dynamic(results, stream.K)


# --- artifacts -------------------------------------------------------------

def loss_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "epoch", "ce", "ir", "total", "lr"])
    for task, e in rows:
        w.writerow([task, e.epoch, repr(e.ce), repr(e.ir), repr(e.total), repr(e.lr)])
    return buf.getvalue()


def save_checkpoint(model: MainModel, train: TrainConfig, path) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "train": train.to_dict(),
        "attr_dim": model.encoder.attr_dim,
        "feat_dim": model.encoder.feat_dim,
    }
    arrays = {f"param/{k}": v for k, v in model.params().items()}
    arrays.update({f"buffer/{k}": v for k, v in model.buffers().items()})
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[MainModel, TrainConfig]:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: not a readable checkpoint ({exc})") from None
    with data:
        if "__header__" not in data.files:
            raise DataError(f"{path}: missing checkpoint header")
        header = json.loads(str(data["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: format {header.get('format')!r}, expected {CHECKPOINT_FORMAT!r}")
        tc = TrainConfig.from_dict(header["train"])
        skeleton = tc.build_model(header["attr_dim"], header["feat_dim"])
        params, buffers = {}, {}
        for key in data.files:
            if key.startswith("param/"):
                params[key[6:]] = np.array(data[key])
            elif key.startswith("buffer/"):
                buffers[key[7:]] = np.array(data[key])
    expected = skeleton.params()
    for name, value in expected.items():
        if name not in params:
            raise DataError(f"{path}: missing parameter {name}")
        if params[name].shape != np.shape(value):
            raise DataError(f"{path}: {name} has shape {params[name].shape}, expected {np.shape(value)}")
    model = skeleton.with_params(params)
    if buffers:
        model.load_buffers(buffers)
    return model, tc


def write_artifacts(outcome: RunOutcome, out_dir) -> dict:
    """Write the run directory; returns ``{artifact: path}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(outcome.config, output_dir=str(out))
    paths = {
        "config": out / "config.json",
        "stream": out / "stream.json",
        "loss": out / "loss.csv",
        "metrics_json": out / "metrics.json",
        "metrics_csv": out / "metrics.csv",
        "checkpoint": out / "checkpoint.npz",
        "seeds": out / "seeds.json",
    }
    paths["config"].write_text(cfg.to_json())
    if outcome.stream is not None:
        paths["stream"].write_text(outcome.stream.to_json())
    paths["loss"].write_text(loss_csv(outcome.loss_rows))
    paths["metrics_json"].write_text(outcome.report.to_json())
    paths["metrics_csv"].write_text(outcome.report.to_csv())
    save_checkpoint(outcome.model, outcome.train, paths["checkpoint"])
    seeds = {
        "train_seed": outcome.train.seed,
        "synth_seed": (outcome.config.synth or {}).get("seed") if outcome.config.synth is not None else None,
        "class_order_seed": outcome.config.class_order_seed,
        "batch_order_rng": "numpy default_rng([train_seed, task_id])",
        "reservoir_rng": "numpy default_rng([train_seed, 1])",
        "reservoir_capacity": outcome.reservoir_capacity,
        "elapsed_seconds": round(outcome.elapsed, 3),
    }
    paths["seeds"].write_text(json.dumps(seeds, indent=1, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


# --- ablations -------------------------------------------------------------

ABLATION_AXES = ("sg", "ir", "meta", "sia_mode", "depth", "reservoir_b")
RESERVOIR_SWEEP = (1, 3, 6, 9, 14)


def _axis_variants(axis: str, values=None) -> list:
    """``[(label_part, train_overrides, run_overrides)]`` for one axis."""
    if axis == "sg":
        return [("", {}, {}), ("w/o SG", {"sia_mode": "ungated"}, {})]
    if axis == "ir":
        return [("", {}, {}), ("w/o IR", {"lam": 0.0}, {})]
    if axis == "meta":
        return [("", {}, {}), ("w/o meta", {"meta_mode": "no_meta"}, {})]
    if axis == "sia_mode":
        return [("SG", {"sia_mode": "self_gating"}, {}), ("PK", {"sia_mode": "polynomial_kernel"}, {})]
    if axis == "depth":
        return [(f"L={n}", {"depth": int(n)}, {}) for n in (values or (1, 2, 3))]
    if axis == "reservoir_b":
        return [(f"B={b:g}", {}, {"reservoir_b": float(b)}) for b in (values or RESERVOIR_SWEEP)]
    raise ConfigError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def ablation_variants(axes, values: dict | None = None) -> list:
    """Cross product of the requested axes as ``(label, train_overrides, run_overrides)``."""
    axes = [a.lower().replace("-", "_") for a in axes]
    if not axes:
        raise ConfigError("no ablation axes given")
    if len(set(axes)) != len(axes):
        raise ConfigError(f"repeated ablation axis in {axes}")
    values = values or {}
    per_axis = [_axis_variants(a, values.get(a)) for a in axes]
    out = []
    for combo in itertools.product(*per_axis):
        parts = [p for p, _, _ in combo if p]
        label = "MAIN" + (" " + " ".join(parts) if parts else "")
        t_over, r_over = {}, {}
        for _, t, r in combo:
            t_over.update(t)
            r_over.update(r)
        out.append((label, t_over, r_over))
    return out


def run_ablation(config: RunConfig, axes, values: dict | None = None) -> list:
    """Run every variant with the same seeds; returns ``[(label, MetricsReport)]``."""
    if "reservoir_b" in [a.lower().replace("-", "_") for a in axes] and config.protocol == "gzsl":
        raise ConfigError("the reservoir_b axis needs a continual protocol")
    bundle = config.load_data()
    rows = []
    for label, t_over, r_over in ablation_variants(axes, values):
        cfg = replace(config, train={**config.train, **t_over}, **r_over)
        cfg.validate()
        outcome = run(cfg, bundle)
        log.info("%s: mH %.2f", label, outcome.report.mH)
        rows.append((label, outcome.report))
    return rows


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "mSA", "mUA", "mH"])
    for label, rep in rows:
        w.writerow([label, f"{rep.mSA:.2f}", f"{rep.mUA:.2f}", f"{rep.mH:.2f}"])
    return buf.getvalue()


# --- gradient-check sweep --------------------------------------------------

@dataclass
class GradCheckRow:
    sia_mode: str
    depth: int
    head: str
    max_rel_err: float
    worst_param: str
    passed: bool


def _toy_problem(seed: int):
    rng = np.random.default_rng(seed)
    n_classes, D, d, n = 4, 6, 8, 12
    attrs = rng.uniform(-1.0, 1.0, (n_classes, D))
    feats = rng.normal(size=(n, d))
    labels = np.arange(n) % n_classes
    return Batch(feats, labels, attrs), D, d


def _grads(model, batch, lam):
    tape = nk.Tape()
    view = model.with_params(tape.watch(model.params()))
    return nk.backward(tape, joint_loss(batch, view.encoder, view.regressor, view.head, lam).graph)


def _check_variant(sia_mode, depth, head, use_bn, lam, seed, inject_fault):
    batch, D, d = _toy_problem(seed)
    model = MainModel.create(D, d, hidden_dim=5, depth=depth, sia_mode=sia_mode, head_kind=head,
                             use_bn=use_bn, regressor_hidden=5, seed=seed)

    def f(values):
        view = model.with_params(values)
        br = joint_loss(batch, view.encoder, view.regressor, view.head, lam)
        return br.graph if br.graph is not None else br.total

    analytic = None
    if inject_fault:
        # the IR part of the gradient enters with the wrong sign: d(ce - lam*ir)
        ce_g, full_g = _grads(model, batch, 0.0), _grads(model, batch, 1.0)
        analytic = {k: ce_g[k] - lam * (full_g[k] - ce_g[k]) for k in ce_g}
    return nk.grad_check(f, model.params(), analytic=analytic)


def gradcheck_sweep(modes=("self_gating", "polynomial_kernel", "ungated"), depths=(1, 2, 3),
                    heads=("cosine", "dot"), lam: float = 5.0, seed: int = 0,
                    inject_fault: bool = False, tol: float = 1e-4) -> list:
    """One row per (sia_mode, depth, head); each row is the worse of BN on and off."""
    rows = []
    for mode, depth, head in itertools.product(modes, depths, heads):
        reports = [_check_variant(mode, depth, head, bn, lam, seed, inject_fault) for bn in (True, False)]
        worst = max(reports, key=lambda r: r.max_rel_err)
        rows.append(GradCheckRow(mode, depth, head, worst.max_rel_err, worst.worst_param, worst.passed(tol)))
    return rows


def gradcheck_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sia_mode", "depth", "head", "max_rel_err", "worst_param", "passed"])
    for r in rows:
        w.writerow([r.sia_mode, r.depth, r.head, f"{r.max_rel_err:.3e}", r.worst_param, r.passed])
    return buf.getvalue()

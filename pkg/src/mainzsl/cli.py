"""Command-line entry point: ``mainzsl {synth,train,eval,ablate,gradcheck,convert}``.

Exit status: 0 ok, 2 configuration error, 3 data error, 4 assertion or
numerical failure. Run directories default to ``$MAINZSL_OUTPUT_ROOT``
(``./runs`` when unset).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import __version__
from .dataio import RunConfig, SynthSpec, convert_xlsa17, synth_generate, write_bundle
from .errors import ConfigError, MainError
from .runner import (
    ABLATION_AXES,
    ablation_csv,
    gradcheck_csv,
    gradcheck_sweep,
    load_checkpoint,
    rescore,
    run,
    run_ablation,
    write_artifacts,
)
from .trainer import SYNTH_DESK_TRAIN, TrainConfig

log = logging.getLogger("mainzsl")

OUTPUT_ROOT_ENV = "MAINZSL_OUTPUT_ROOT"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _literal(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_assignments(text: str, what: str) -> dict:
    """``"a=1,b=x"`` -> ``{"a": 1, "b": "x"}``; a JSON object is accepted as well."""
    text = text.strip()
    if text in ("", "default"):
        return {}
    if text.startswith("{"):
        try:
            value = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{what}: {exc}") from None
        if not isinstance(value, dict):
            raise ConfigError(f"{what}: expected a JSON object")
        return value
    out = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{what}: expected key=value, got {item!r}")
        out[key.strip().replace("-", "_")] = _literal(value.strip())
    return out


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


# --- argument groups -------------------------------------------------------

_TRAIN_FLAGS = {
    "lam": float, "inner_lr": float, "meta_lr": float, "inner_steps": int, "epochs_per_task": int,
    "batch_size": int, "meta_mode": str, "inner_optimizer": str, "head_kind": str, "sia_mode": str,
    "depth": int, "hidden_dim": int, "regressor_hidden": int, "seed": int,
}


def _add_run_args(p: argparse.ArgumentParser) -> None:
    src = p.add_argument_group("data and protocol")
    src.add_argument("--config", help="RunConfig JSON to start from; flags override its fields")
    src.add_argument("--bundle", help="dataset bundle directory")
    src.add_argument("--synth", help="'default', or generator overrides such as 'n_seen=10,noise=0.1'")
    src.add_argument("--protocol", choices=("gzsl", "fixed", "dynamic"))
    src.add_argument("--tasks", type=int)
    src.add_argument("--dynamic-seen-counts", type=_int_list)
    src.add_argument("--dynamic-unseen-counts", type=_int_list)
    src.add_argument("--reservoir-b", type=float)
    src.add_argument("--normalize-attributes", action="store_true", default=None)
    src.add_argument("--class-order-seed", type=int)
    src.add_argument("--output-dir")

    tr = p.add_argument_group("training")
    for name, kind in _TRAIN_FLAGS.items():
        tr.add_argument("--" + name.replace("_", "-"), type=kind, dest=f"train_{name}")
    tr.add_argument("--lr-decay", dest="train_lr_decay", action=argparse.BooleanOptionalAction)
    tr.add_argument("--use-bn", dest="train_use_bn", action=argparse.BooleanOptionalAction)
    tr.add_argument("--no-sg", action="store_true", help="drop the self-gating interaction")
    tr.add_argument("--no-ir", action="store_true", help="train without inverse regularization")
    tr.add_argument("--no-meta", action="store_true", help="plain optimization instead of Reptile")


def build_run_config(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else {}
    if args.bundle is not None:
        base["bundle"], base["synth"] = args.bundle, None
    if args.synth is not None:
        base["synth"], base["bundle"] = parse_assignments(args.synth, "--synth"), None
    if base.get("bundle") is None and base.get("synth") is None:
        raise ConfigError("choose a data source with --bundle or --synth")
    for key in ("protocol", "tasks", "dynamic_seen_counts", "dynamic_unseen_counts", "reservoir_b",
                "normalize_attributes", "class_order_seed", "output_dir"):
        value = getattr(args, key)
        if value is not None:
            base[key] = value

    train = dict(SYNTH_DESK_TRAIN) if base.get("synth") is not None and not args.config else {}
    train.update(base.get("train") or {})
    for f in fields(TrainConfig):
        value = getattr(args, f"train_{f.name}", None)
        if value is not None:
            train[f.name] = value
    if args.no_sg:
        train["sia_mode"] = "ungated"
    if args.no_ir:
        train["lam"] = 0.0
    if args.no_meta:
        train["meta_mode"] = "no_meta"
    # the snapshot records every training field so reruns do not depend on defaults
    base["train"] = TrainConfig.from_dict(train).to_dict()
    if base.get("synth") is not None and args.train_seed is not None and "seed" not in parse_assignments(
            args.synth or "", "--synth"):
        base["synth"] = {**base["synth"], "seed": args.train_seed}
    if base.get("synth") is not None:
        base["synth"] = asdict(SynthSpec.from_dict(base["synth"]))
    return RunConfig.from_dict(base)


def default_run_dir(config: RunConfig, command: str) -> Path:
    digest = hashlib.sha256(replace(config, output_dir=None).to_json().encode()).hexdigest()[:12]
    return output_root() / f"{command}-{config.protocol}-{digest}"


# --- commands --------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SynthSpec.from_dict(parse_assignments(args.spec or "default", "--spec"))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    bundle = synth_generate(spec)
    out = Path(args.out) if args.out else output_root() / f"synth-{spec.seed}"
    write_bundle(bundle, out)
    print(json.dumps({"bundle": str(out), "classes": bundle.n_classes, "samples": len(bundle.labels)}))
    return 0


def cmd_train(args) -> int:
    config = build_run_config(args)
    out = Path(config.output_dir) if config.output_dir else default_run_dir(config, "train")
    outcome = run(config)
    paths = write_artifacts(outcome, out)
    sys.stdout.write(outcome.report.to_json())
    log.info("artifacts in %s (%.1f s)", out, outcome.elapsed)
    print(json.dumps({"run_dir": str(out), "artifacts": sorted(paths)}), file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run) if args.run else None
    config_path = Path(args.config) if args.config else (run_dir / "config.json" if run_dir else None)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else (run_dir / "checkpoint.npz" if run_dir else None)
    if config_path is None or ckpt_path is None:
        raise ConfigError("eval needs --run DIR, or both --config and --checkpoint")
    config = RunConfig.load(config_path)
    model, _ = load_checkpoint(ckpt_path)
    report = rescore(config, model)
    out = Path(args.output_dir) if args.output_dir else run_dir
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_metrics.json").write_text(report.to_json())
        (out / "eval_metrics.csv").write_text(report.to_csv())
    sys.stdout.write(report.to_json())
    return 0


def cmd_ablate(args) -> int:
    config = build_run_config(args)
    axes = [a for a in args.axes.split(",") if a.strip()]
    values = {}
    for item in args.values or []:
        key, _, vals = item.partition("=")
        values[key.strip().replace("-", "_").lower()] = [_literal(v) for v in vals.split(",") if v.strip()]
    rows = run_ablation(config, axes, values)
    out = Path(config.output_dir) if config.output_dir else default_run_dir(config, "ablate-" + "-".join(axes))
    out.mkdir(parents=True, exist_ok=True)
    table = ablation_csv(rows)
    (out / "ablation.csv").write_text(table)
    (out / "ablation.json").write_text(
        json.dumps([{"variant": label, **rep.to_dict()} for label, rep in rows], indent=1, sort_keys=True) + "\n")
    (out / "config.json").write_text(replace(config, output_dir=str(out)).to_json())
    sys.stdout.write(table)
    return 0


def cmd_gradcheck(args) -> int:
    rows = gradcheck_sweep(lam=args.lam, seed=args.seed, inject_fault=args.inject_fault, tol=args.tol)
    sys.stdout.write(gradcheck_csv(rows))
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"FAIL {r.sia_mode} L={r.depth} {r.head}: rel. err {r.max_rel_err:.3e} in {r.worst_param}",
              file=sys.stderr)
    return 4 if failed else 0


def cmd_convert(args) -> int:
    bundle = convert_xlsa17(args.res101, args.att_splits, args.out, args.name)
    print(json.dumps({"bundle": args.out, "name": bundle.name, "classes": bundle.n_classes,
                      "seen": len(bundle.seen_ids), "unseen": len(bundle.unseen_ids)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mainzsl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset bundle")
    s.add_argument("--spec", help="generator overrides, e.g. 'n_seen=10,map_kind=mlp'")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train and evaluate one configuration")
    _add_run_args(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="re-score a saved checkpoint")
    e.add_argument("--run", help="run directory written by train")
    e.add_argument("--config")
    e.add_argument("--checkpoint")
    e.add_argument("--output-dir")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train a set of model variants and tabulate mH")
    _add_run_args(a)
    a.add_argument("--axes", required=True, help=f"comma-separated subset of {', '.join(ABLATION_AXES)}")
    a.add_argument("--values", action="append", help="axis values, e.g. 'depth=1,2' or 'reservoir_b=1,3'")
    a.set_defaults(func=cmd_ablate)

    g = sub.add_parser("gradcheck", help="finite-difference check of every architecture variant")
    g.add_argument("--lam", type=float, default=5.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--inject-fault", action="store_true", help="flip the sign of the IR gradient")
    g.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("convert", help="convert a res101.mat/att_splits.mat pair to a bundle")
    c.add_argument("--res101", required=True)
    c.add_argument("--att-splits", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--name")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

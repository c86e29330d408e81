"""Command-line entry point wiring the modules into reproducible runs.

Exit codes: 0 success, 1 validation or data failure, 2 usage error.
Every run writes a resolved-config JSON next to its outputs so it can be
replayed exactly.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evalkit, scoremap, synthgen, trainer
from .embedstore import DatasetValidationError, read_dataset, validate
from .params import HyperParams
from .tensorfile import TensorFileError


def _add_hp_flags(p: argparse.ArgumentParser, *, require_seed: bool = False) -> None:
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--lambda", dest="dev_weight", type=float, default=None,
                   help="deviation loss weight")
    g.add_argument("--a", dest="margin", type=float, default=None,
                   help="deviation margin for anomalous bags")
    g.add_argument("--k-percent", type=float, default=None, help="Top-K percent")
    g.add_argument("--lr", type=float, default=None)
    g.add_argument("--epochs", type=int, default=None)
    g.add_argument("--tau", type=float, default=None, help="alignment temperature")
    g.add_argument("--prior-mode", choices=["empirical", "reference"], default=None)
    g.add_argument("--sign-mode", choices=["signed", "absolute"], default=None,
                   help="scoring-time deviation sign mode")
    g.add_argument("--train-sign-mode", choices=["signed", "absolute"], default=None)
    g.add_argument("--pseudo-anomaly", action="store_true", default=None)
    g.add_argument("--shared-delta", action="store_true", default=None)
    g.add_argument("--blur-sigma", type=float, default=None)
    g.add_argument("--no-smooth", dest="smooth", action="store_false", default=None)
    g.add_argument("--seed", type=int, required=require_seed,
                   default=argparse.SUPPRESS if require_seed else None)


_HP_FIELDS = (
    "dev_weight", "margin", "k_percent", "lr", "epochs", "tau", "prior_mode",
    "sign_mode", "train_sign_mode", "pseudo_anomaly", "shared_delta",
    "blur_sigma", "smooth", "seed",
)


def _hyperparams(args: argparse.Namespace) -> HyperParams:
    overrides = {
        name: getattr(args, name)
        for name in _HP_FIELDS
        if getattr(args, name, None) is not None
    }
    return HyperParams(**overrides)


def _write_run_config(path: Path, subcommand: str, args: argparse.Namespace,
                      hp: HyperParams | None) -> None:
    doc = {
        "subcommand": subcommand,
        "args": {k: (str(v) if isinstance(v, Path) else v)
                 for k, v in sorted(vars(args).items()) if k != "func"},
        "hyperparams": hp.to_dict() if hp is not None else None,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        manifest = read_dataset(args.data)
    except DatasetValidationError as exc:
        for violation in exc.violations:
            print(violation)
        return 1
    violations = validate(manifest)
    for violation in violations:
        print(violation)
    if violations:
        return 1
    print(f"ok: {len(manifest.records)} records, d={manifest.embed_dim}, "
          f"grid={manifest.grid}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    config = synthgen.SynthConfig(
        embed_dim=args.d,
        grid=(args.grid_h, args.grid_w),
        n_test=args.n_test,
        anomaly_fraction=args.anomaly_fraction,
        noise_scale=args.noise_scale,
        alpha=args.alpha,
        hard_fraction=args.hard_fraction,
        seed=args.seed,
    )
    out = Path(args.out)
    synthgen.generate_to(config, out)
    _write_run_config(out / "run_config.json", "synth", args, None)
    print(f"wrote synthetic dataset to {out}")
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    hp = _hyperparams(args)
    manifest = read_dataset(args.data)
    prompts, prior, report = trainer.fit(manifest, hp)
    out = trainer.save_learned(args.data, prompts, prior, report)
    _write_run_config(out / "run_config.json", "fit", args, hp)
    print(f"fit: {hp.epochs} epochs, final loss "
          f"{report.epochs[-1]['total']:.6f}, learned state in {out}")
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    hp = _hyperparams(args)
    manifest = read_dataset(args.data)
    prompts, prior = trainer.load_learned(args.data, manifest)
    out = Path(args.out)
    test = sorted(manifest.split_records("test"), key=lambda r: r.image_id)
    if not test:
        print("error: dataset has no test records", file=sys.stderr)
        return 1
    for record in test:
        amap = scoremap.compute_anomaly_map(record, prompts, prior, hp)
        scoremap.write_map(out, amap)
    _write_run_config(out / "run_config.json", "score", args, hp)
    print(f"scored {len(test)} test images into {out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    hp = _hyperparams(args)
    manifest = read_dataset(args.data)
    prompts, prior = trainer.load_learned(args.data, manifest)
    records = evalkit.evaluate(manifest, prompts, prior, hp,
                               per_image_pixel=args.per_image_pixel)
    out = Path(args.out)
    evalkit.write_csv(records, out)
    _write_run_config(out.with_suffix(out.suffix + ".config.json"), "eval", args, hp)
    for r in records:
        print(f"{r.class_name} {r.level} auroc={r.auroc:.6f}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    hp = _hyperparams(args)
    manifest = read_dataset(args.data)
    values = [float(v) for v in args.values.split(",") if v]
    table = evalkit.sweep(manifest, hp, args.param, values)
    out = Path(args.out)
    evalkit.write_csv(table, out)
    _write_run_config(out.with_suffix(out.suffix + ".config.json"), "sweep", args, hp)
    print(f"swept {args.param} over {values}: {len(table.records)} rows in {out}")
    return 0


def _cmd_heatmap(args: argparse.Namespace) -> int:
    written = scoremap.render_pgms(args.maps, args.out)
    print(f"rendered {len(written)} heatmaps")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="devscore",
        description="Deviation-guided anomaly scoring over patch embeddings",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("validate", help="check a dataset directory")
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--grid-h", type=int, default=16)
    p.add_argument("--grid-w", type=int, default=16)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--anomaly-fraction", type=float, default=0.05)
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--hard-fraction", type=float, default=0.05)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="train prompt deltas on the train split")
    p.add_argument("--data", required=True)
    _add_hp_flags(p, require_seed=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("score", help="write anomaly maps for the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_hp_flags(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="AUROC evaluation CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-image-pixel", action="store_true")
    _add_hp_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="sensitivity sweep CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True, choices=sorted(evalkit.SWEEPABLE))
    p.add_argument("--values", required=True, help="comma-separated values")
    _add_hp_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("heatmap", help="render PGMs from stored maps")
    p.add_argument("--maps", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_heatmap)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (DatasetValidationError, TensorFileError, FileNotFoundError,
            ValueError, trainer.TrainingDivergedError) as exc:
        if isinstance(exc, DatasetValidationError):
            for violation in exc.violations:
                print(violation, file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())

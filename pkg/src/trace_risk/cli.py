"""Command-line entry point: ``trace-risk <command> ...``.

Exit codes: 0 success, 1 validation or contract failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, read_meta, save_checkpoint
from .data import (DatasetError, IngestionError, SchemaError, SplitError, default_synthetic_schema,
                   drop_incomplete, generate_synthetic, load_csv, load_schema, simulate_missing,
                   stratified_split, write_csv)
from .explain import (AttentionError, attention_by_feature, attention_by_sample, export_matrix_csv,
                      select_samples)
from .metrics import FIELDS as REPORT_FIELDS
from .metrics import EvalReport, EvaluationError
from .nnmlp import NnMlpConfig, NnMlpModel
from .tensor import ConfigError, ContractError
from .trace import TraceConfig, TraceModel
from .training import TrainConfig, TrainingError, evaluate, stream_rng, train

log = logging.getLogger("trace_risk")

VALIDATION_ERRORS = (SchemaError, IngestionError, SplitError, DatasetError, ContractError,
                     ConfigError, CheckpointError, EvaluationError, AttentionError, TrainingError,
                     ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# helpers ------------------------------------------------------------------
def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def write_report_csv(report: EvalReport, path, extra: dict | None = None) -> None:
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra) + list(REPORT_FIELDS))
        d = report.as_dict()
        w.writerow([str(v) for v in extra.values()] + [repr(d[k]) if isinstance(d[k], float) else str(d[k])
                                                       for k in REPORT_FIELDS])


def _print_report(report: EvalReport, stream=None) -> None:
    stream = stream or sys.stdout
    print(f"tp={report.tp} fp={report.fp} tn={report.tn} fn={report.fn}", file=stream)
    for k in ("accuracy", "f1", "sensitivity", "specificity", "balanced_accuracy"):
        print(f"{k:>18s}: {getattr(report, k):.4f}", file=stream)


def _model_config(args):
    if args.model == "trace":
        return TraceConfig(model_size=args.model_size, n_encoder_layers=args.layers, n_heads=args.heads,
                           mlp_ratio=args.mlp_ratio, dropout=args.dropout,
                           shared_continuous_mlp=args.shared_continuous_mlp,
                           checkbox_embeddings=not args.no_checkbox_embeddings,
                           standardize=not args.no_standardize)
    return NnMlpConfig(hidden1=args.hidden, hidden2=args.hidden, standardize=not args.no_standardize)


def _train_config(args, seed: int, alpha: float | None = None) -> TrainConfig:
    optimizer = args.optimizer or ("adam" if args.model == "trace" else "rmsprop")
    return TrainConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                       focal_alpha=args.alpha if alpha is None else alpha, focal_gamma=args.gamma,
                       optimizer=optimizer, weight_decay=args.weight_decay,
                       plateau_patience=args.patience, plateau_factor=args.plateau_factor,
                       threshold=args.threshold, seed=seed)


def _build_model(args, schema, seed: int):
    cfg = _model_config(args)
    cls = TraceModel if args.model == "trace" else NnMlpModel
    return cls(schema, cfg, seed=stream_rng(seed, "init"))


def _fit(args, schema, train_set, val_set, seed: int, alpha: float | None = None):
    model = _build_model(args, schema, seed)
    history, _ = train(model, train_set, val_set, _train_config(args, seed, alpha))
    return model, history


def _load_inputs(args):
    schema = load_schema(args.schema)
    return schema, load_csv(args.data, schema)


def _resolved(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}


def _write_manifest(args, schema, out: Path, outputs: dict, extra: dict | None = None) -> None:
    manifest = {
        "tool": "trace-risk",
        "version": __version__,
        "command": args.command,
        "args": _resolved(args),
        "seed": args.seed,
        "schema_fingerprint": schema.fingerprint(),
        "data": {"path": str(args.data), "sha256": _sha256(args.data)},
        "outputs": outputs,
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# commands -----------------------------------------------------------------
def cmd_synth(args) -> int:
    schema = default_synthetic_schema()
    ds, truth = generate_synthetic(schema, args.samples, args.positive_ratio, args.seed, noise=args.noise)
    if args.missing:
        ds = simulate_missing(ds, args.missing, stream_rng(args.seed, "missing"))
    Path(args.schema_out).write_text(schema.dumps() + "\n")
    write_csv(ds, args.data_out)
    print(f"wrote {len(ds)} samples ({ds.n_positive} positive) to {args.data_out}")
    return 0


def cmd_train(args) -> int:
    schema, ds = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_all = len(ds)
    if args.drop_missing:
        ds = drop_incomplete(ds)
    train_set, val_set = stratified_split(ds, args.val_fraction, stream_rng(args.seed, "split"))
    outputs = {"checkpoint": "model.npz", "history": "history.csv", "report": "report.csv",
               "validation": "val.csv"}
    config = {"model": asdict(_model_config(args)), "train": asdict(_train_config(args, args.seed))}
    _write_manifest(args, schema, out, outputs, {"resolved_config": config})
    log.info("training %s on %d samples (%d before filtering), validating on %d",
             args.model, len(train_set), n_all, len(val_set))
    model, history = _fit(args, schema, train_set, val_set, args.seed)
    save_checkpoint(model, out / "model.npz", extra={"best_epoch": history.best_epoch})
    history.write_csv(out / "history.csv")
    write_csv(val_set, out / "val.csv")
    report = evaluate(model, val_set, args.threshold)
    write_report_csv(report, out / "report.csv")
    print(f"best epoch {history.best_epoch} of {len(history.epochs)}; "
          f"{len(train_set)} training / {len(val_set)} validation samples")
    _print_report(report)
    return 0


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    schema = load_schema(args.schema)
    meta = read_meta(args.checkpoint)
    if meta["schema_fingerprint"] != schema.fingerprint():
        raise CheckpointError("checkpoint schema fingerprint does not match --schema")
    model = load_checkpoint(args.checkpoint)
    ds = load_csv(args.data, schema)
    report = evaluate(model, ds, args.threshold)
    if args.out:
        write_report_csv(report, args.out)
    _print_report(report)
    return 0


def cmd_missing_curve(args) -> int:
    ratios = _floats(args.ratios)
    if any(not 0.0 <= r <= 0.5 for r in ratios):
        raise UsageError("missing ratios must lie in [0, 0.5]")
    schema, ds = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(args, schema, out, {"curve": "curve.csv"})
    rows = []
    for ratio in ratios:
        f1s, bas = [], []
        for rep in range(args.repeats):
            seed = args.seed + rep
            train_set, val_set = stratified_split(ds, args.val_fraction, stream_rng(seed, "split"))
            train_set = simulate_missing(train_set, ratio, stream_rng(seed, "missing"))
            model, _ = _fit(args, schema, train_set, val_set, seed)
            rep_ = evaluate(model, val_set, args.threshold)
            f1s.append(rep_.f1)
            bas.append(rep_.balanced_accuracy)
            rows.append([repr(ratio), str(rep), repr(rep_.f1), repr(rep_.balanced_accuracy)])
            log.info("ratio %.3f repeat %d: f1 %.4f ba %.4f", ratio, rep, rep_.f1, rep_.balanced_accuracy)
        rows.append([repr(ratio), "mean", repr(float(np.mean(f1s))), repr(float(np.mean(bas)))])
        print(f"ratio {ratio:.3f}: mean f1 {np.mean(f1s):.4f}  mean ba {np.mean(bas):.4f}")
    with (out / "curve.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "repeat", "f1", "ba"])
        w.writerows(rows)
    return 0


ABLATION_FIELDS = ("alpha", "arm", "train_samples", "full_train_samples", "val_samples", "val_hash",
                   "repeats", "accuracy", "f1", "sensitivity", "specificity", "balanced_accuracy")


def cmd_ablate_missing(args) -> int:
    alphas = _floats(args.alphas)
    schema, ds = _load_inputs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(args, schema, out, {"ablation": "ablation.csv"})
    splits = []
    for rep in range(args.repeats):
        seed = args.seed + rep
        train_set, val_set = stratified_split(ds, args.val_fraction, stream_rng(seed, "split"))
        if args.simulate_missing:
            train_set = simulate_missing(train_set, args.simulate_missing, stream_rng(seed, "missing"))
        val_set = drop_incomplete(val_set)
        splits.append((seed, train_set, val_set, drop_incomplete(train_set)))
    has_incomplete = any(t.missing_matrix().any() for _, t, _, _ in splits)
    if not has_incomplete:
        log.warning("training data has no incomplete samples; writing the keep-missing arm only")
    val_hash = hashlib.sha256("".join(v.content_hash() for _, _, v, _ in splits).encode()).hexdigest()

    rows = []
    for alpha in alphas:
        arms = (("drop-missing", "keep-missing") if has_incomplete else ("keep-missing",))
        for arm in arms:
            reports, sizes = [], []
            for seed, train_set, val_set, complete in splits:
                data = complete if arm == "drop-missing" else train_set
                model, _ = _fit(args, schema, data, val_set, seed, alpha)
                reports.append(evaluate(model, val_set, args.threshold))
                sizes.append(len(data))
            mean = {k: float(np.mean([getattr(r, k) for r in reports]))
                    for k in ("accuracy", "f1", "sensitivity", "specificity", "balanced_accuracy")}
            rows.append([repr(alpha), arm, repr(float(np.mean(sizes))),
                         repr(float(np.mean([len(t) for _, t, _, _ in splits]))),
                         repr(float(np.mean([len(v) for _, _, v, _ in splits]))), val_hash,
                         str(len(splits))] + [repr(mean[k]) for k in mean])
            print(f"alpha {alpha}: {arm:>13s}  n={np.mean(sizes):.0f}  f1 {mean['f1']:.4f}  "
                  f"ba {mean['balanced_accuracy']:.4f}")
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_FIELDS)
        w.writerows(rows)
    return 0


def cmd_attention(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    if model.kind != "trace":
        raise AttentionError("model has no attention (nnMLP checkpoints cannot be explained)")
    ds = load_csv(args.data, model.schema)
    idx = select_samples(ds, args.samples, args.seed)
    subset = ds.take(idx)
    if args.view == "by-sample":
        mat = attention_by_sample(model, subset, args.layer, sample_ids=idx)
    else:
        mat = attention_by_feature(model, subset, args.layer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"attention_{args.view.replace('-', '_')}.csv"
    export_matrix_csv(mat, path)
    print(f"wrote {mat.matrix.shape[0]}x{mat.matrix.shape[1]} attention matrix to {path}")
    return 0


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    recorded = manifest["args"]
    if _sha256(recorded["data"]) != manifest["data"]["sha256"]:
        raise DatasetError("data file content changed since the manifest was written")
    argv = _argv_from_args(recorded, out=args.out)
    return main(argv)


def _argv_from_args(recorded: dict, out: str) -> list[str]:
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[recorded["command"]]
    argv = [recorded["command"]]
    for action in sub._actions:
        if not action.option_strings or action.dest in ("help",):
            continue
        value = out if action.dest == "out" else recorded.get(action.dest)
        flag = action.option_strings[-1] if action.option_strings[-1].startswith("--") else action.option_strings[0]
        if isinstance(action, (argparse._StoreTrueAction,)):
            if value:
                argv.append(flag)
        elif value is not None:
            argv += [flag, str(value)]
    return argv


# parser -------------------------------------------------------------------
def _training_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--schema", required=True, help="schema file (JSON or YAML)")
    p.add_argument("--model", choices=("trace", "nnmlp"), default="trace")
    p.add_argument("--alpha", type=float, default=0.8, help="focal loss alpha")
    p.add_argument("--gamma", type=float, default=2.0, help="focal loss gamma")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--optimizer", choices=("adam", "rmsprop"), default=None,
                   help="default: adam for trace, rmsprop for nnmlp")
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--plateau-factor", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-size", type=int, default=128)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--mlp-ratio", type=int, default=4)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--hidden", type=int, default=64, help="nnMLP hidden width")
    p.add_argument("--shared-continuous-mlp", action="store_true")
    p.add_argument("--no-checkbox-embeddings", action="store_true",
                   help="treat checkbox members as independent binary categoricals")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trace-risk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _training_flags()

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--keep-missing", action="store_true", help="keep incomplete samples (default)")
    p.add_argument("--drop-missing", action="store_true", help="train on complete samples only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None, help="optional report CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("missing-curve", parents=[common], help="performance vs simulated missing ratio")
    p.add_argument("--ratios", default="0,0.05,0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_missing_curve)

    p = sub.add_parser("ablate-missing", parents=[common],
                       help="train with and without incomplete samples, same validation set")
    p.add_argument("--alphas", default="0.8")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--simulate-missing", type=float, default=0.0,
                   help="mask this ratio of training cells before the comparison")
    p.set_defaults(func=cmd_ablate_missing)

    p = sub.add_parser("attention", help="export attention maps from a TRACE checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--view", choices=("by-sample", "by-feature"), default="by-sample")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("synth", help="write a synthetic dataset and its schema")
    p.add_argument("--data-out", required=True)
    p.add_argument("--schema-out", required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--positive-ratio", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--missing", type=float, default=0.0, help="ratio of cells to mask")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "keep_missing", False) and getattr(args, "drop_missing", False):
            raise UsageError("--keep-missing and --drop-missing are mutually exclusive")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"trace-risk: error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"trace-risk: I/O error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"trace-risk: I/O error: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"trace-risk: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

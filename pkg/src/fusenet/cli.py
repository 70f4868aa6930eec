"""Command-line entry point: ``fusenet prepare|train|eval|gradcheck|replay``.

Exit codes: 0 success, 1 verification or accuracy failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, FusenetError, IngestionError, NumericError, \
    PreprocessingError, ShapeError, UsageError
from .gradcheck import TOY_CONFIG, format_results, grad_check
from .metrics import format_confusion, format_key_values, format_table
from .model import ModelConfig, init
from .train import TrainConfig, ensemble_predict, evaluate_predictions, train

log = logging.getLogger("fusenet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CommandError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def make_run_dir(base, tag: str) -> Path:
    """``<base>/<UTC timestamp>-<tag>``; a numeric suffix avoids clobbering."""
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = Path(base)
    cand = base / f"{stamp}-{tag}"
    i = 1
    while cand.exists():
        cand = base / f"{stamp}-{tag}-{i}"
        i += 1
    cand.mkdir(parents=True)
    return cand


class Manifest:
    """Replayable record of one command, rewritten as the run progresses."""

    def __init__(self, path: Path, command: str, argv: list[str], config: dict,
                 seed=None, inputs=()):
        self.path = path
        self.doc = {
            "command": command,
            "argv": list(argv),
            "config": config,
            "seed": seed,
            "inputs": {str(p): sha256(p) for p in inputs if Path(p).is_file()},
            "outputs": {},
            "started": _now(),
            "finished": None,
        }
        self.write()

    def write(self):
        self.path.write_text(json.dumps(self.doc, indent=2, sort_keys=True) + "\n")

    def finish(self, outputs=(), **extra):
        self.doc["outputs"] = {str(p): sha256(p) for p in outputs}
        self.doc["finished"] = _now()
        self.doc.update(extra)
        self.write()


# -- commands -------------------------------------------------------------------

def cmd_prepare(args, argv) -> int:
    root = Path(args.root)
    if not root.exists():
        raise CommandError(f"dataset root not found: {root}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    existing = [D.cache_path(out, s) for s in D.SPLITS if D.cache_path(out, s).exists()]
    if existing and not args.force:
        raise CommandError(f"{out} already holds a prepared dataset; use --force to replace it")
    manifest = Manifest(out / "manifest.json", "prepare", argv,
                        {"dataset": args.dataset, "root": str(root), "acc": args.acc,
                         "window": D.WINDOW, "hop": D.HOP})
    if args.dataset == "ucl":
        splits = D.load_ucl(root, acc=args.acc)
    else:
        splits = D.load_pamap2(root)

    paths = []
    lines = [f"dataset {args.dataset}"]
    train_ds = splits[0]
    lines.append(f"channels {train_ds.x.shape[2]}")
    lines.append(f"classes {train_ds.num_classes}")
    for name, ds in zip(D.SPLITS, splits):
        p = D.cache_path(out, name)
        D.save_cache(p, ds)
        paths.append(p)
        hist = np.bincount(ds.y, minlength=ds.num_classes)
        lines.append(f"split {name} {len(ds)}")
        lines.append(f"subjects.{name} " + ",".join(str(s) for s in np.unique(ds.subjects)))
        for cname, count in zip(ds.class_names, hist):
            lines.append(f"histogram.{name}.{cname} {count}")
    for cname, (mu, sd) in zip(train_ds.channel_names, train_ds.channel_stats):
        lines.append(f"stats.{cname} mean={mu:.6f} std={sd:.6f}")
    summary = out / "summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    paths.append(summary)
    manifest.finish(paths)
    print("\n".join(lines))
    return EXIT_OK


def _data_dir(args) -> Path:
    path = args.data or os.environ.get("FUSENET_DATA")
    if not path:
        raise CommandError("no dataset given: pass --data or set FUSENET_DATA")
    path = Path(path)
    for split in D.SPLITS:
        if not D.cache_path(path, split).is_file():
            raise CommandError(f"missing prepared split {D.cache_path(path, split)}")
    return path


def _parse_head(text: str) -> str:
    if text == "gap":
        return text
    kind, _, size = text.partition(":")
    if kind != "dense" or not size.isdigit() or int(size) < 1:
        raise argparse.ArgumentTypeError(f"head must be 'gap' or 'dense:SIZE', got {text!r}")
    return f"dense:{int(size)}"


def cmd_train(args, argv) -> int:
    data_dir = _data_dir(args)
    train_ds = D.load_cache(D.cache_path(data_dir, "train"))
    val_ds = D.load_cache(D.cache_path(data_dir, "validation"))
    if args.limit:
        train_ds = train_ds.subset(slice(0, args.limit))
        val_ds = val_ds.subset(slice(0, args.limit))

    model_cfg = ModelConfig(
        input_height=train_ds.x.shape[2], input_width=train_ds.x.shape[3],
        num_classes=train_ds.num_classes, fusion_layer=args.fusion_layer, head=args.head,
        dropout_rate=args.dropout, precision=args.precision, filter_width=args.filter_width)
    patience = min(args.patience, args.epochs)
    train_cfg = TrainConfig(batch_size=args.batch_size, max_epochs=args.epochs,
                            patience=patience, seed=args.seed)
    net = init(model_cfg, args.seed)

    run = make_run_dir(args.out, f"seed{args.seed}")
    inputs = [D.cache_path(data_dir, s) for s in ("train", "validation")]
    manifest = Manifest(run / "manifest.json", "train", argv,
                        {"model": model_cfg.to_dict(), "train": asdict(train_cfg),
                         "limit": args.limit, "num_parameters": net.num_parameters()},
                        seed=args.seed, inputs=inputs)
    print(f"run directory {run}")
    print(f"parameters {net.num_parameters()}")
    try:
        best, trainlog = train(net, train_ds, val_ds, train_cfg)
    except NumericError as e:
        manifest.finish(status="failed", error=str(e))
        raise CommandError(str(e), EXIT_FAIL) from None
    ckpt_path = run / "checkpoint.fnkc"
    save_checkpoint(ckpt_path, best)
    log_path = run / "train_log.csv"
    trainlog.to_csv(log_path)
    manifest.finish([ckpt_path, log_path], status="ok", best_epoch=best.epoch,
                    epochs_run=len(trainlog.records))
    print(f"best epoch {best.epoch}")
    print(f"validation accuracy {1.0 - best.val_error:.6f}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    data_dir = _data_dir(args)
    ds_path = D.cache_path(data_dir, args.split)
    ds = D.load_cache(ds_path)
    ckpts = [load_checkpoint(p) for p in args.ckpt]
    run = make_run_dir(args.out, f"eval-{args.split}")
    manifest = Manifest(run / "manifest.json", "eval", argv,
                        {"split": args.split, "checkpoints": list(args.ckpt), "jobs": args.jobs},
                        inputs=[ds_path, *args.ckpt])
    try:
        y_pred = ensemble_predict(ckpts, ds, jobs=args.jobs)
    except (UsageError, ShapeError) as e:
        manifest.finish(status="failed", error=str(e))
        raise
    ev = evaluate_predictions(y_pred, ds)

    names = ds.class_names
    files = {
        "metrics.txt": format_key_values(ev.report, names),
        "report.txt": format_table(ev.report, names),
        "confusion.txt": format_confusion(ev.confusion, names),
        "subjects.txt": "".join(f"{s} {c / t:.6f} {c}/{t}\n"
                                for s, (c, t) in sorted(ev.per_subject.items())),
    }
    paths = []
    for fname, text in files.items():
        (run / fname).write_text(text)
        paths.append(run / fname)
    manifest.finish(paths, status="ok", members=len(ckpts))

    mode = "ensemble of %d" % len(ckpts) if len(ckpts) > 1 else "single model"
    print(f"{mode} on {args.split} ({len(ds)} samples) -> {run}")
    print(files["report.txt"])
    print(files["confusion.txt"])
    print("subject accuracy")
    print(files["subjects.txt"])
    print(files["metrics.txt"], end="")
    if args.min_accuracy is not None and ev.report.accuracy < args.min_accuracy:
        print(f"accuracy {ev.report.accuracy:.6f} below required {args.min_accuracy}")
        return EXIT_FAIL
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    t0 = time.perf_counter()
    results = grad_check(TOY_CONFIG, tolerance=args.tolerance, seed=args.seed)
    print(format_results(results, args.tolerance))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} blocks passed "
          f"in {time.perf_counter() - t0:.1f}s")
    if failed:
        print("failing blocks: " + ", ".join(failed))
        return EXIT_FAIL
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    doc = json.loads(Path(args.manifest).read_text())
    replay_argv = doc["argv"]
    print("replaying: fusenet " + " ".join(replay_argv))
    return main(replay_argv)


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusenet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="preprocess a corpus into cached splits")
    s.add_argument("--dataset", choices=["ucl", "pamap2"], required=True)
    s.add_argument("--root", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--acc", choices=["total", "body"], default="total",
                   help="UCI HAR acceleration source")
    s.add_argument("--force", action="store_true", help="replace an existing prepared dataset")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--data", help="prepared dataset directory (default: $FUSENET_DATA)")
    s.add_argument("--out", default="runs")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fusion-layer", type=int, choices=[1, 2, 3], default=3)
    s.add_argument("--head", type=_parse_head, default="gap")
    s.add_argument("--dropout", type=float, default=0.4)
    s.add_argument("--epochs", type=int, default=2000)
    s.add_argument("--patience", type=int, default=100)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--filter-width", type=int, default=15)
    s.add_argument("--precision", type=int, choices=[32, 64], default=32)
    s.add_argument("--limit", type=int, default=0,
                   help="use only the first N training and validation windows")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate one checkpoint or an ensemble")
    s.add_argument("--ckpt", nargs="+", required=True)
    s.add_argument("--data", help="prepared dataset directory (default: $FUSENET_DATA)")
    s.add_argument("--split", choices=["test", "validation"], default="test")
    s.add_argument("--out", default="runs")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--min-accuracy", type=float, default=None,
                   help="exit 1 if accuracy falls below this value")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("replay", help="re-run a command from its manifest.json")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args, argv)
    except CommandError as e:
        print(f"fusenet {args.command}: {e}", file=sys.stderr)
        return e.code
    except NumericError as e:
        print(f"fusenet {args.command}: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (IngestionError, PreprocessingError, CheckpointError, UsageError, ShapeError,
            FusenetError, OSError) as e:
        print(f"fusenet {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

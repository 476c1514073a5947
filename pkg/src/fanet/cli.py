"""``fanet`` command line: train, eval, predict, gradcheck, synth.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure, 3 I/O error.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .data import DatasetManifest, generate_synthetic, load_image, load_split, save_mask
from .errors import FanetError, NumericalError, UsageError, ValidationError
from .metrics import ConfusionCounts, accumulate, binarize, format_report, report
from .model import FANet
from .optim import Adam
from .tensorio import save_tensor
from .train import predict_image, train

log = logging.getLogger("fanet")


def worker_count(requested=1):
    """``requested`` workers, capped by FANET_THREADS when it is set."""
    raw = os.environ.get("FANET_THREADS")
    if raw is None:
        return max(1, requested)
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError("FANET_THREADS must be an integer") from None
    return max(1, min(requested, cap))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _run_config(args):
    run = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        run.train = replace(run.train, seed=args.seed)
        run.synth = replace(run.synth, seed=args.seed)
    if getattr(args, "threshold", None) is not None:
        run.model = replace(run.model, threshold=args.threshold)
    return run


def _manifest(args, run):
    path = args.manifest or run.data.manifest
    if not path:
        raise UsageError("no manifest given (use --manifest or data.manifest)")
    return DatasetManifest.read(path, tile_size=run.model.tile_size, seed=run.train.seed)


def cmd_train(args):
    run = _run_config(args)
    out = Path(args.out or "runs/fanet")
    workers = worker_count(run.data.workers)
    manifest = _manifest(args, run)
    train_samples = load_split(manifest, "train", workers=workers)
    if not train_samples:
        raise ValidationError("manifest has no training tiles")
    val_samples = load_split(manifest, "val", workers=workers) or train_samples

    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model, opt = ckpt.model, ckpt.optimizer
        start, history, best = ckpt.epoch + 1, ckpt.history, ckpt.best_iou
    else:
        model = FANet(run.model, seed=run.train.seed)
        opt = Adam(model.parameters(), lr=run.train.lr)
        start, history, best = 1, [], -1.0
    result = train(model, train_samples, run.train, val_samples, opt, start, out, history, best,
                   workers=workers)
    with open(out / "metrics.jsonl", "w") as fh:
        for entry in result.history:
            fh.write(json.dumps({k: v for k, v in entry.items() if k != "batch_losses"}) + "\n")
    print(f"trained to epoch {result.epoch}; best val IoU {max(result.best_iou, 0):.4f}; "
          f"checkpoints in {out}")
    return 0


def evaluate_manifest(model, manifest, split="test", threshold=0.5, workers=1):
    samples = load_split(manifest, split, tile_size=model.config.tile_size, workers=workers)
    if not samples:
        raise ValidationError(f"no {split} tiles of size {model.config.tile_size} in the manifest "
                              "(checkpoint tile size and data do not match)")
    counts = ConfusionCounts()
    for start in range(0, len(samples), 8):
        chunk = samples[start:start + 8]
        probs = model.predict_proba(np.stack([s[0] for s in chunk]))
        counts = accumulate(binarize(probs, threshold), np.stack([s[1] for s in chunk]), counts)
    return report(counts)


def cmd_eval(args):
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    model = load_checkpoint(args.checkpoint).model
    if args.config:
        run = load_config(args.config)
        if run.model.tile_size != model.config.tile_size:
            raise ValidationError(f"config tile size {run.model.tile_size} does not match "
                                  f"checkpoint tile size {model.config.tile_size}")
    manifest = DatasetManifest.read(args.manifest, tile_size=model.config.tile_size) \
        if args.manifest else None
    if manifest is None:
        raise UsageError("eval needs --manifest")
    threshold = args.threshold if args.threshold is not None else model.config.threshold
    rep = evaluate_manifest(model, manifest, args.split, threshold, worker_count())
    text = format_report(rep)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        (out / "report.json").write_text(rep.to_json() + "\n")
    return 0


def cmd_predict(args):
    if not args.checkpoint:
        raise UsageError("predict needs --checkpoint")
    model = load_checkpoint(args.checkpoint).model
    image = load_image(args.image)
    probs = predict_image(model, image)
    threshold = args.threshold if args.threshold is not None else model.config.threshold
    if not np.all(np.isfinite(probs)):
        raise NumericalError("prediction contains non-finite probabilities")
    out = Path(args.out or ".")
    stem = Path(args.image).stem
    save_mask(out / f"{stem}_mask.png", binarize(probs, threshold))
    save_tensor(out / f"{stem}_prob.ftns", probs[None, None])
    print(f"wrote {out / (stem + '_mask.png')} and {out / (stem + '_prob.ftns')}")
    return 0


def cmd_gradcheck(args):
    seeds = tuple(range(args.seed, args.seed + args.num_seeds))
    results = gradcheck.run(args.selector, seeds=seeds)
    print(gradcheck.format_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} parameter group(s) failed: "
              + ", ".join(f"{r.module}/{r.group}" for r in failed))
        return NumericalError.exit_code
    print(f"all {len(results)} groups within {gradcheck.TOLERANCE:g}")
    return 0


def cmd_synth(args):
    run = _run_config(args)
    out = Path(args.out or "data/synth")
    manifest = generate_synthetic(run.synth, out)
    print(f"wrote {len(manifest.entries)} image/mask pairs and {out / 'manifest.tsv'}")
    return 0


def build_parser():
    p = _Parser(prog="fanet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *flags):
        if "config" in flags:
            sp.add_argument("--config", help="key=value config file")
        if "checkpoint" in flags:
            sp.add_argument("--checkpoint", help="checkpoint directory")
        if "manifest" in flags:
            sp.add_argument("--manifest", help="tab-separated image/mask/split manifest")
        if "seed" in flags:
            sp.add_argument("--seed", type=int, default=None)
        if "out" in flags:
            sp.add_argument("--out", help="output directory")
        if "threshold" in flags:
            sp.add_argument("--threshold", type=float, default=None)

    sp = sub.add_parser("train", help="train a model")
    common(sp, "config", "checkpoint", "manifest", "seed", "out", "threshold")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    common(sp, "config", "checkpoint", "manifest", "out", "threshold")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="predict a mask for one image")
    common(sp, "checkpoint", "out", "threshold")
    sp.add_argument("image")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient check")
    sp.add_argument("selector", nargs="?", default="all",
                    choices=("all",) + gradcheck.SELECTORS)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--num-seeds", type=int, default=1)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("synth", help="generate a synthetic building dataset")
    common(sp, "config", "seed", "out")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except FanetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

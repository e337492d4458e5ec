"""Command-line entry point: ``brm-embed <command> [flags]``.

Exit codes: 0 ok, 1 check failure, 2 bad config, 3 I/O, 4 degenerate data,
5 dimension mismatch.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import FIELDS, LOSSES, RunConfig, build_config
from .data import gen_synthetic, gen_synthetic_rasters, save_dataset, split_indices
from .errors import (
    DimensionMismatch,
    InsufficientClassSamples,
    InvalidConfig,
    MalformedFile,
    NoValidTriplet,
)
from .evaluation import build_report, linear_classifier_train
from .gradcheck import DEFAULT_H, DEFAULT_TOL, PIPELINE_LOSSES, run_checks
from .numeric import make_rng
from .training import DegenerateData, dataset_vectors, embed, load_run_data, train

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_DEGENERATE, EXIT_DIM = range(6)

log = logging.getLogger("brm_embed")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_run_flags(p: argparse.ArgumentParser, skip=()) -> None:
    """One flag per RunConfig field, all defaulting to None so precedence can be resolved."""
    p.add_argument("--config", help="flat 'key = value' config file")
    for name, f in FIELDS.items():
        if name in skip:
            continue
        if name == "augment":
            p.add_argument("--augment", dest="augment", action="store_const", const=True)
            p.add_argument("--no-augment", dest="augment", action="store_const", const=False)
            continue
        kw = {"default": None, "dest": name}
        if name == "loss":
            kw["choices"] = LOSSES
        default = f.default
        kw["help"] = f"(default: {','.join(map(str, default)) if isinstance(default, tuple) else default})"
        p.add_argument(_flag(name), **kw)


def config_from_args(args, skip=()) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in FIELDS if name not in skip}
    return build_config(overrides, args.config)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.classes < 2 or args.per_class < 2 or args.sigma < 0 or args.dim < 1:
        raise InvalidConfig("need --classes >= 2, --per-class >= 2, --dim >= 1, --sigma >= 0")
    fmt = args.format or ("skb1" if str(args.out).endswith(".skb") else "csv")
    rng = make_rng(args.seed)
    if fmt == "skb1":
        ds = gen_synthetic_rasters(rng, args.classes, args.per_class, side=args.side)
    else:
        ds = gen_synthetic(rng, args.classes, args.per_class, args.dim, args.sigma)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds)} samples, {ds.num_classes} classes ({fmt}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    resume = ckpt_io.load(args.resume) if args.resume else None
    out = Path(cfg.out or "brm-run")
    result = train(cfg, resume=resume, out_dir=out)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"epochs": result.checkpoint.epoch, "stopped_early": result.stopped_early,
                      **{k: v for k, v in last.items() if k != "epoch"}}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = config_from_args(args)
    ck = ckpt_io.load(args.checkpoint)
    ds = load_run_data(cfg)
    x = dataset_vectors(ds, cfg.crop)
    if x.shape[1] != ck.params.input_dim:
        raise DimensionMismatch(
            f"checkpoint expects {ck.params.input_dim} input features, data has {x.shape[1]}")
    train_idx, val_idx = split_indices(ds.labels, cfg.val_fraction, make_rng([cfg.seed, 2]))
    eval_idx = {"val": val_idx, "train": train_idx,
                "all": np.arange(len(ds.labels))}[args.split]
    emb = embed(ck.params, x)
    clf = linear_classifier_train(emb[train_idx], ds.labels[train_idx], ds.num_classes,
                                  epochs=args.clf_epochs, reg=args.clf_reg, seed=cfg.seed)
    report = build_report(clf.scores(emb[eval_idx]), ds.labels[eval_idx], emb[eval_idx],
                          ds.num_classes)
    text = report.to_json()
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out) / "eval.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    losses = PIPELINE_LOSSES if args.loss == "all" else (args.loss,)
    ok = True
    for loss in losses:
        reports = run_checks(range(args.seed, args.seed + args.seeds), loss=loss, n=args.n,
                             dim=args.dim, bins=args.bins, h=args.h, tolerance=args.tolerance,
                             fault=args.inject_fault)
        worst = {}
        for r in reports:
            for comp, err in r.max_rel.items():
                worst[comp] = max(worst.get(comp, 0.0), err)
        passed = sum(r.passed for r in reports)
        need = int(np.ceil(args.min_pass * len(reports)))
        for comp, err in worst.items():
            print(f"{loss:12s} {comp:8s} max_rel_err={err:.3e}")
        failed = [r.seed for r in reports if not r.passed]
        excluded = sum(r.excluded for r in reports)
        verdict = "PASS" if passed >= need else "FAIL"
        print(f"{loss:12s} {verdict} {passed}/{len(reports)} seeds within {args.tolerance:g} "
              f"(need {need}); {excluded} kink-adjacent coordinates excluded")
        if failed:
            print(f"{loss:12s} failing seeds: {' '.join(map(str, failed))}")
        ok &= passed >= need
    return EXIT_OK if ok else EXIT_CHECK


def _sweep(cfg: RunConfig, variants, key):
    rows = []
    for value in variants:
        run_cfg = dataclasses.replace(cfg, **{key: value}).validate()
        out = Path(cfg.out) / f"{key}-{value}" if cfg.out else None
        result = train(run_cfg, out_dir=out)
        rows.append((value, result))
    return rows


def cmd_sweep_bins(args) -> int:
    cfg = config_from_args(args, skip=("bins",))
    try:
        bins = [int(b) for b in args.bins.split(",") if b]
    except ValueError:
        raise InvalidConfig(f"--bins must be a comma-separated integer list, got {args.bins!r}") from None
    if not bins or min(bins) < 2:
        raise InvalidConfig("every bin count must be >= 2")
    rows = []
    for r, result in _sweep(cfg, bins, "bins"):
        last = result.history[-1]
        rows.append((r, repr(last["val_recall_at_1"]), repr(last["loss"])))
    _emit_csv(cfg, "sweep_bins.csv", ("R", "val_recall_at_1", "final_loss"), rows)
    return EXIT_OK


def cmd_compare_losses(args) -> int:
    cfg = config_from_args(args, skip=("loss",))
    losses = [s for s in args.losses.split(",") if s]
    bad = [s for s in losses if s not in LOSSES]
    if bad or not losses:
        raise InvalidConfig(f"unknown loss(es) {bad}; choose from {', '.join(LOSSES)}")
    rows = []
    for loss, result in _sweep(cfg, losses, "loss"):
        rows.append((loss, repr(result.history[-1]["val_recall_at_1"]), result.best_epoch))
    _emit_csv(cfg, "compare_losses.csv", ("loss", "val_recall_at_1", "epochs_to_converge"), rows)
    return EXIT_OK


def _emit_csv(cfg, name, header, rows):
    text = _csv_text(header, rows)
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out) / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brm-embed",
                                     description="Bayesian-risk metric learning experiments")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset (CSV features or SKB1 rasters)")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--side", type=int, default=16, help="raster side length (skb1 only)")
    p.add_argument("--format", choices=("csv", "skb1"), help="default: by extension (.skb -> skb1)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an encoder")
    add_run_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with a linear classifier")
    add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("val", "train", "all"), default="val")
    p.add_argument("--clf-epochs", type=int, default=100)
    p.add_argument("--clf-reg", type=float, default=1e-4)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--loss", choices=PIPELINE_LOSSES + ("all",), default="brm")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--h", type=float, default=DEFAULT_H)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOL)
    p.add_argument("--min-pass", type=float, default=0.95,
                   help="fraction of seeds that must pass (default 0.95)")
    p.add_argument("--inject-fault", choices=("neg-hist-sign",), help=argparse.SUPPRESS)
    p.add_argument("--out", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep-bins", help="one training run per histogram bin count")
    add_run_flags(p, skip=("bins",))
    p.add_argument("--bins", default="70,75,100,125,150")
    p.set_defaults(func=cmd_sweep_bins)

    p = sub.add_parser("compare-losses", help="train each loss with an identical budget")
    add_run_flags(p, skip=("loss",))
    p.add_argument("--losses", default=",".join(LOSSES))
    p.set_defaults(func=cmd_compare_losses)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateData, InsufficientClassSamples, NoValidTriplet) as exc:
        print(f"error: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except DimensionMismatch as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIM
    except (OSError, MalformedFile) as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

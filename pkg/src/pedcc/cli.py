"""Command-line interface.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .centroids import GenConfig, NoConvergenceWarning, generate, inspect
from .data import load_csv, read_centroids, write_centroids
from .errors import NonFiniteLossError, PedccError
from .experiments import BlobSpec, blob_datasets
from .losses import FeatureBatch, MarginConfig
from .metrics import evaluate, pair_verification, read_pairs
from .numeric import Rng
from .trainer import LossSpec, MlpModel, TrainPlan, features_of, train


class UsageError(Exception):
    """Bad or inconsistent flags; maps to exit code 2."""


def _fmt_summary(info):
    return (f"classes={info['num_classes']} dim={info['dim']} "
            f"min_angle={info['min_angle_deg']:.4f} mean_angle={info['mean_angle_deg']:.4f} "
            f"max_angle={info['max_angle_deg']:.4f} energy={info['energy']:.10g} "
            f"iterations={info['iterations']} stop={info['stop_reason']}")


def _existing(path, what):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _writable(path, what):
    if path is None:
        return None
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise UsageError(f"directory for {what} does not exist: {p.parent}")
    return p


def cmd_generate(args):
    if args.classes < 2:
        raise UsageError(f"--classes must satisfy c >= 2 (got {args.classes})")
    if args.dim < 2:
        raise UsageError(f"--dim must satisfy d >= 2 (got {args.dim})")
    out = _writable(args.out, "--out")
    try:
        cfg = GenConfig(max_iterations=args.max_iters, step_size=args.step,
                        force_exponent=args.force_exponent, convergence_tol=args.tol)
    except PedccError as exc:
        raise UsageError(str(exc)) from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NoConvergenceWarning)
        cs = generate(args.classes, args.dim, seed=args.seed, cfg=cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    write_centroids(cs, out)
    print(_fmt_summary(inspect(cs)))
    return 0


def cmd_inspect(args):
    cs = read_centroids(_existing(args.centroids, "--centroids"))
    info = inspect(cs)
    if args.json:
        print(json.dumps({k: v for k, v in info.items() if k != "row_norms"}, indent=1))
    else:
        print(_fmt_summary(info))
    return 0


def _parse_widths(text):
    try:
        widths = [int(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise UsageError(f"--hidden must be a comma-separated list of integers, got {text!r}") from None
    if any(w < 1 for w in widths):
        raise UsageError("--hidden widths must be positive")
    return widths


def _load_training_data(args):
    if args.synth is not None:
        try:
            spec = BlobSpec.parse(args.synth)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return blob_datasets(spec, args.seed)
    tr = load_csv(_existing(args.data, "--data"), args.label_column, args.normalize)
    ev = None
    if args.eval_data:
        ev = load_csv(_existing(args.eval_data, "--eval-data"), args.label_column, args.normalize,
                      stats=tr.stats, num_classes=tr.num_classes, split="eval")
    return tr, ev


def cmd_train(args):
    if (args.data is None) == (args.synth is None):
        raise UsageError("exactly one of --data or --synth is required")
    if args.loss == "pedcc" and args.centroids is None:
        raise UsageError("--loss pedcc requires --centroids")
    if args.finetune_epoch is not None and not 1 <= args.finetune_epoch < args.epochs:
        raise UsageError(f"--finetune-epoch must lie in [1, --epochs) = [1, {args.epochs}), "
                         f"got {args.finetune_epoch}")
    if args.finetune_epoch is not None and args.loss != "pedcc":
        raise UsageError("--finetune-epoch only applies to --loss pedcc")
    _writable(args.log, "--log")
    _writable(args.model_out, "--model-out")
    centroids = read_centroids(_existing(args.centroids, "--centroids")) if args.centroids else None
    hidden = _parse_widths(args.hidden)
    try:
        margin = MarginConfig(scale_s=args.s, margin_m=args.m, margin_mode=args.margin_mode)
        plan = TrainPlan(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
                         momentum=args.momentum, weight_decay=args.wd,
                         finetune_epoch=args.finetune_epoch, finetune_lr=args.finetune_lr,
                         loss=LossSpec(args.loss, margin, args.n), seed=args.seed)
    except PedccError as exc:
        raise UsageError(str(exc)) from None

    tr, ev = _load_training_data(args)
    d_feat = args.feat_dim or (centroids.dim if centroids is not None else 16)
    model = MlpModel.init([tr.dim] + hidden + [d_feat], Rng(args.seed + 1), args.activation)
    try:
        model, out_centroids, log = train(model, tr, centroids, plan, ev)
    except NonFiniteLossError as exc:
        print(f"error: non-finite loss at epoch {exc.epoch}", file=sys.stderr)
        return 1
    if args.log:
        log.to_csv(args.log)
    if args.model_out:
        model.save(args.model_out)
    if args.centroids_out and out_centroids is not None:
        write_centroids(out_centroids, _writable(args.centroids_out, "--centroids-out"))
    last = log[-1]
    print(f"epoch={last.epoch} loss={last.loss:.6g} train_acc={last.train_acc:.4f} "
          f"eval_acc={last.eval_acc:.4f} mean_cos={last.mean_cos:.4f}")
    return 0


def _features_for(args, model):
    if args.synth is not None:
        try:
            spec = BlobSpec.parse(args.synth)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        _, ev = blob_datasets(spec, args.seed)
        return features_of(model, ev.inputs), ev.labels
    ds = load_csv(_existing(args.data, "--data"), args.label_column)
    return features_of(model, model.prepare_inputs(ds.inputs)), ds.labels


def _load_model(path):
    p = _existing(path, "--model")
    try:
        return MlpModel.load(p)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read model {p}: {exc}") from None


def cmd_eval(args):
    if (args.data is None) == (args.synth is None):
        raise UsageError("exactly one of --data or --synth is required")
    model = _load_model(args.model)
    centroids = read_centroids(_existing(args.centroids, "--centroids"))
    pairs = read_pairs(_existing(args.pairs, "--pairs")) if args.pairs else None
    feats, labels = _features_for(args, model)
    if feats.shape[1] != centroids.dim:
        print(f"error: model features have dim {feats.shape[1]}, centroids have dim {centroids.dim}",
              file=sys.stderr)
        return 1
    report = evaluate(FeatureBatch(feats, labels), centroids).to_dict()
    if pairs is not None:
        acc, thr = pair_verification(feats, pairs)
        report["pair_accuracy"] = acc
        report["pair_threshold"] = thr
    print(json.dumps(report, indent=1))
    return 0


def pca_components(x, k=3, seed=0, max_iter=10_000, tol=1e-12):
    """Top-``k`` principal axes by power iteration with deflation.

    Each axis is signed so its largest-magnitude entry is positive.
    """
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(len(x), 1)
    rng = Rng(seed)
    axes, variances = [], []
    for _ in range(k):
        v = rng.normal(cov.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                break
            w /= norm
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        lam = float(v @ cov @ v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        axes.append(v)
        variances.append(lam)
        cov = cov - lam * np.outer(v, v)
    return np.array(axes), np.array(variances)


def project(points, how, seed=0):
    if points.shape[1] < 3:
        raise ValueError(f"projection {how} needs at least 3 dimensions, got {points.shape[1]}")
    if how == "first3":
        return points[:, :3]
    axes, _ = pca_components(points, 3, seed)
    return (points - points.mean(axis=0)) @ axes.T


def cmd_export_plot(args):
    if (args.centroids is None) == (args.model is None):
        raise UsageError("give either --centroids or --model with --data/--synth")
    if args.centroids is not None:
        cs = read_centroids(_existing(args.centroids, "--centroids"))
        points, labels = cs.centers, np.arange(cs.num_classes)
    else:
        if (args.data is None) == (args.synth is None):
            raise UsageError("--model needs exactly one of --data or --synth")
        points, labels = _features_for(args, _load_model(args.model))
    out = _writable(args.out, "--out")
    try:
        xyz = project(points, args.project, args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "label"])
        for (a, b, c), lab in zip(xyz, labels):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(c)), int(lab)])
    print(f"wrote {len(labels)} points to {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="pedcc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate evenly-distributed centroids")
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--force-exponent", type=float, default=1.0)
    g.add_argument("--max-iters", type=int, default=20_000)
    g.add_argument("--tol", type=float, default=1e-7)
    g.add_argument("--step", type=float, default=0.05)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("inspect", help="summarise a centroid file")
    i.add_argument("centroids")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_inspect)

    def data_flags(sp):
        sp.add_argument("--data", help="CSV file with a header row")
        sp.add_argument("--synth", help="synthetic blobs, e.g. 'classes=5,train_per_class=500'")
        sp.add_argument("--label-column", default="label")
        sp.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train an MLP feature extractor")
    data_flags(t)
    t.add_argument("--eval-data")
    t.add_argument("--normalize", choices=["none", "per-feature-standardize"], default="none")
    t.add_argument("--centroids")
    t.add_argument("--loss", choices=["softmax", "am", "center", "pedcc"], default="pedcc")
    t.add_argument("--m", type=float, default=0.5)
    t.add_argument("--s", type=float, default=30.0)
    t.add_argument("--n", type=int, default=1)
    t.add_argument("--margin-mode", choices=["additive-cosine", "additive-angular"],
                   default="additive-cosine")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--wd", type=float, default=5e-4)
    t.add_argument("--finetune-epoch", type=int)
    t.add_argument("--finetune-lr", type=float, default=1e-3)
    t.add_argument("--hidden", default="64")
    t.add_argument("--feat-dim", type=int)
    t.add_argument("--activation", choices=["relu", "tanh"], default="relu")
    t.add_argument("--log")
    t.add_argument("--model-out")
    t.add_argument("--centroids-out", help="where to write fine-tuned centroids")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model")
    data_flags(e)
    e.add_argument("--model", required=True)
    e.add_argument("--centroids", required=True)
    e.add_argument("--pairs")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-plot", help="write 3-D coordinates for plotting")
    data_flags(x)
    x.add_argument("--centroids")
    x.add_argument("--model")
    x.add_argument("--project", choices=["first3", "pca3"], default="first3")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.exit(2, f"{parser.prog} {args.command}: error: {exc}\n")
    except PedccError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

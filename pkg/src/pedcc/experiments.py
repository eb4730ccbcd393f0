"""Desk-scale synthetic protocol: Gaussian blobs, a 20-64-16 MLP, 50 epochs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .centroids import CentroidSet, generate
from .data import LabeledDataset, load_idx, standardize, synth_blobs, train_eval_split
from .losses import FeatureBatch, MarginConfig
from .metrics import EvalReport, evaluate
from .numeric import Rng
from .trainer import LossSpec, MlpModel, TrainLog, TrainPlan, class_directions, features_of, train


@dataclass(frozen=True)
class BlobSpec:
    classes: int = 5
    train_per_class: int = 500
    eval_per_class: int = 100
    d_in: int = 20
    center_scale: float = 3.0
    noise_sigma: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "BlobSpec":
        """``"classes=5,train_per_class=500,d_in=20"``; unspecified keys keep defaults."""
        kwargs = {}
        fields = cls.__dataclass_fields__
        if text.strip() == "default":
            return cls()
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, value = part.partition("=")
            key = key.strip()
            if not sep or key not in fields:
                raise ValueError(f"bad synth entry {part!r}; keys: {', '.join(fields)}")
            kwargs[key] = type(fields[key].default)(value)
        return cls(**kwargs)


def blob_datasets(spec: BlobSpec, seed: int):
    """Standardised train/eval splits; eval reuses the train statistics."""
    ds = synth_blobs(Rng(seed), spec.classes, spec.train_per_class + spec.eval_per_class,
                     spec.d_in, spec.center_scale, spec.noise_sigma)
    tr, ev = train_eval_split(ds, spec.eval_per_class)
    x_tr, stats = standardize(tr.inputs)
    x_ev, _ = standardize(ev.inputs, stats)
    return (LabeledDataset(x_tr, tr.labels, tr.num_classes, "train", stats),
            LabeledDataset(x_ev, ev.labels, ev.num_classes, "eval", stats))


@dataclass
class RunResult:
    model: MlpModel
    centroids: CentroidSet
    log: TrainLog
    eval_features: np.ndarray
    eval_labels: np.ndarray
    report: EvalReport
    # mean cosine of eval features to the per-class mean directions
    mean_cos_to_class_mean: float


def run_blobs(kind="pedcc", seed=0, epochs=50, finetune_epoch=None, root_n=1, hidden=64, d_feat=16,
              margin=None, blobs=None, centroids=None, epoch_callback=None) -> RunResult:
    blobs = blobs or BlobSpec()
    margin = margin or MarginConfig(scale_s=30.0, margin_m=0.5)
    tr, ev = blob_datasets(blobs, seed)
    if centroids is None:
        centroids = generate(blobs.classes, d_feat, seed=seed)
    rng = Rng(seed + 1)
    model = MlpModel.init([blobs.d_in, hidden, d_feat], rng)
    plan = TrainPlan(epochs=epochs, batch_size=64, learning_rate=0.1, momentum=0.9, weight_decay=5e-4,
                     finetune_epoch=finetune_epoch, finetune_lr=1e-3,
                     loss=LossSpec(kind, margin, root_n), seed=seed)
    model, out_centroids, log = train(model, tr, centroids, plan, ev, epoch_callback=epoch_callback)
    feats = features_of(model, ev.inputs)
    batch = FeatureBatch(feats, ev.labels)
    ref = out_centroids if kind == "pedcc" else class_directions(feats, ev.labels, blobs.classes)
    report = evaluate(batch, ref)
    dirs = class_directions(feats, ev.labels, blobs.classes)
    u = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    own = float(np.mean(np.einsum("ij,ij->i", u, dirs[ev.labels])))
    return RunResult(model, out_centroids, log, feats, ev.labels, report, own)


def run_idx_smoke(train_images, train_labels, eval_images=None, eval_labels=None, limit=4000,
                  epochs=10, num_classes=47, d_feat=64, hidden=256, seed=0, scale_s=64.0):
    """Short PEDCC run on the first ``limit`` records of an IDX dataset.

    Without eval files the last fifth of the loaded records is held out.
    Returns ``(TrainLog, eval accuracy)``.
    """
    full = load_idx(train_images, train_labels, limit=limit, num_classes=num_classes)
    if eval_images is not None:
        ev = load_idx(eval_images, eval_labels, limit=limit, num_classes=num_classes, split="eval")
        tr = full
    else:
        cut = len(full) - len(full) // 5
        tr, ev = full.subset(np.arange(cut)), full.subset(np.arange(cut, len(full)), "eval")
    x_tr, stats = standardize(tr.inputs)
    x_ev, _ = standardize(ev.inputs, stats)
    tr = LabeledDataset(x_tr, tr.labels, num_classes, "train", stats)
    ev = LabeledDataset(x_ev, ev.labels, num_classes, "eval", stats)
    centroids = generate(num_classes, d_feat, seed=seed)
    model = MlpModel.init([tr.dim, hidden, d_feat], Rng(seed + 1))
    plan = TrainPlan(epochs=epochs, batch_size=64, learning_rate=0.1, momentum=0.9, weight_decay=5e-4,
                     loss=LossSpec("pedcc", MarginConfig(scale_s=scale_s, margin_m=0.5)), seed=seed)
    _, _, log = train(model, tr, centroids, plan, ev)
    return log, log[-1].eval_acc

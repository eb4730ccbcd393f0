"""Small MLP feature extractor trained with SGD under any of the losses.

With the ``pedcc`` loss the class centroids play the role of the (frozen)
classification layer: only the MLP parameters are updated, unless a
fine-tune epoch is set, from which point the centroids also take small
gradient steps and are renormalised onto the sphere after each one.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import losses
from .centroids import CentroidSet
from .data import LabeledDataset
from .errors import ConfigError, DimensionMismatchError, NonFiniteLossError
from .losses import CenterState, FeatureBatch, MarginConfig
from .numeric import Rng, gaussian_matrix, l2_normalize_rows, row_norms

LOSS_KINDS = ("softmax", "am", "center", "pedcc")
TRAINLOG_HEADER = ["epoch", "loss", "train_acc", "eval_acc", "mean_cos", "seconds"]


@dataclass
class MlpModel:
    weights: list
    biases: list
    activation: str = "relu"
    # classifier head for losses that learn one: {"weights": c x d, "bias": c or None}
    head: Optional[dict] = None
    # (mean, std) applied to raw inputs by prepare_inputs
    input_stats: Optional[tuple] = None

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("need one bias per weight matrix and at least one layer")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ConfigError(f"layer shapes {a.shape} and {b.shape} do not chain")

    @classmethod
    def init(cls, widths, rng: Rng, activation="relu"):
        """He-normal weights (Glorot for tanh), zero biases."""
        if len(widths) < 2:
            raise ConfigError("widths needs at least input and output sizes")
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            gain = 2.0 / fan_in if activation == "relu" else 2.0 / (fan_in + fan_out)
            weights.append(math.sqrt(gain) * gaussian_matrix(rng, fan_in, fan_out))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activation)

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def d_in(self):
        return self.weights[0].shape[0]

    @property
    def d_feat(self):
        return self.weights[-1].shape[1]

    def copy(self):
        head = None
        if self.head is not None:
            head = {k: None if v is None else v.copy() for k, v in self.head.items()}
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.activation, head, self.input_stats)

    def prepare_inputs(self, raw):
        if self.input_stats is None:
            return np.asarray(raw, dtype=np.float64)
        mean, std = self.input_stats
        return (np.asarray(raw, dtype=np.float64) - mean) / std

    def save(self, path):
        arrays = {f"w{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        if self.head is not None:
            arrays["head_w"] = self.head["weights"]
            if self.head.get("bias") is not None:
                arrays["head_b"] = self.head["bias"]
        if self.input_stats is not None:
            arrays["input_mean"], arrays["input_std"] = self.input_stats
        with open(path, "wb") as fh:
            np.savez(fh, activation=np.array(self.activation), layers=np.array(len(self.weights)),
                     **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            n = int(z["layers"])
            head = None
            if "head_w" in z:
                head = {"weights": z["head_w"], "bias": z["head_b"] if "head_b" in z else None}
            stats = (z["input_mean"], z["input_std"]) if "input_mean" in z else None
            return cls([z[f"w{i}"] for i in range(n)], [z[f"b{i}"] for i in range(n)],
                       str(z["activation"]), head, stats)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def forward(model: MlpModel, inputs):
    """Features (identity on the last layer) and the cache ``backward`` needs."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise DimensionMismatchError(f"expected inputs with {model.d_in} columns, got shape {x.shape}")
    acts, pre = [x], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(z if i == last else _act(z, model.activation))
    return acts[-1], (acts, pre)


def backward(model: MlpModel, cache, grad_out):
    """Parameter gradients given d(loss)/d(features)."""
    acts, pre = cache
    g = grad_out
    gw, gb = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        if i != len(model.weights) - 1:
            g = g * _act_grad(pre[i], acts[i + 1], model.activation)
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ model.weights[i].T
    return gw, gb, g


def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=0.0):
    """SGD with momentum; decay is added to the gradient (coupled L2).

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    Returns new lists; inputs are not modified.
    """
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        v = momentum * v + g + weight_decay * p
        new_p.append(p - lr * v)
        new_v.append(v)
    return new_p, new_v


@dataclass(frozen=True)
class LossSpec:
    kind: str = "pedcc"
    margin: MarginConfig = field(default_factory=MarginConfig)
    root_n: int = 1
    normalize_before_mse: bool = True
    center_weight: float = 0.01
    center_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.kind!r}")
        if int(self.root_n) != self.root_n or self.root_n < 1:
            raise ConfigError("root factor n must be an integer >= 1")


@dataclass(frozen=True)
class TrainPlan:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_schedule: tuple = ()
    finetune_epoch: Optional[int] = None
    finetune_lr: float = 1e-3
    loss: LossSpec = field(default_factory=LossSpec)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not (self.learning_rate > 0 and self.finetune_lr > 0):
            raise ConfigError("learning rates must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("momentum must lie in [0, 1) and weight_decay be >= 0")
        if self.finetune_epoch is not None and not 1 <= self.finetune_epoch < self.epochs:
            raise ConfigError(
                f"finetune_epoch must satisfy 1 <= finetune_epoch < epochs={self.epochs}, "
                f"got {self.finetune_epoch}")
        for ep, mult in self.lr_schedule:
            if ep < 1 or not mult > 0:
                raise ConfigError("lr_schedule entries are (epoch >= 1, multiplier > 0)")

    def lr_at(self, epoch):
        mult = 1.0
        for ep, m in sorted(self.lr_schedule):
            if epoch >= ep:
                mult = m
        return self.learning_rate * mult

    def finetuning(self, epoch):
        return self.finetune_epoch is not None and epoch >= self.finetune_epoch


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    eval_acc: float
    mean_cos: float
    seconds: float
    # angle (degrees) between each centroid row and its value at the start of training
    centroid_drift_deg: Optional[np.ndarray] = None
    max_centroid_norm_error: float = 0.0

    def row(self):
        return [self.epoch, self.loss, self.train_acc, self.eval_acc, self.mean_cos, self.seconds]


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise ValueError("epochs must be logged in order")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAINLOG_HEADER)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(v)) for v in r.row()[1:]])


def init_head(kind, c, d, rng: Rng):
    if kind in ("softmax", "center"):
        return {"weights": math.sqrt(1.0 / d) * gaussian_matrix(rng, c, d), "bias": np.zeros(c)}
    if kind == "am":
        return {"weights": gaussian_matrix(rng, c, d), "bias": None}
    return None


def class_directions(features, labels, c):
    """Unit mean direction of each class's normalised features."""
    u = l2_normalize_rows(features)
    sums = np.zeros((c, u.shape[1]))
    np.add.at(sums, labels, u)
    norms = row_norms(sums)
    return sums / np.where(norms > 0, norms, 1.0)[:, None]


def predict(model: MlpModel, features, kind, centroids=None):
    """Class predictions for features produced by ``model`` trained under ``kind``."""
    if kind == "pedcc":
        return (l2_normalize_rows(features) @ centroids.T).argmax(axis=1)
    if kind == "am":
        return (l2_normalize_rows(features) @ l2_normalize_rows(model.head["weights"]).T).argmax(axis=1)
    return (features @ model.head["weights"].T + model.head["bias"]).argmax(axis=1)


def reference_directions(model, features, labels, kind, centroids, c):
    if kind == "pedcc":
        return centroids
    if kind == "am":
        return l2_normalize_rows(model.head["weights"])
    return class_directions(features, labels, c)


def mean_cos_to(features, labels, directions):
    u = l2_normalize_rows(features)
    return float(np.mean(np.einsum("ij,ij->i", u, directions[labels])))


def batch_loss(model: MlpModel, feats, labels, spec: LossSpec, centroids, center_state, finetune):
    """Loss result for one batch plus the updated center state (center loss only)."""
    batch = FeatureBatch(feats, labels)
    if spec.kind == "pedcc":
        res = losses.pedcc_loss(batch, centroids, spec.margin, spec.root_n,
                                spec.normalize_before_mse, finetune=finetune)
        return res, center_state
    if spec.kind == "am":
        return losses.am_softmax(batch, model.head["weights"], spec.margin, weight_grad=True), center_state
    res = losses.softmax_ce(batch, model.head["weights"], model.head["bias"])
    if spec.kind == "center":
        cres, center_state = losses.center_loss(batch, center_state, reduction="mean")
        res.value += spec.center_weight * cres.value
        res.grad_features = res.grad_features + spec.center_weight * cres.grad_features
    return res, center_state


def train(model: MlpModel, data: LabeledDataset, centroids: Optional[CentroidSet], plan: TrainPlan,
          eval_data: Optional[LabeledDataset] = None, epoch_callback=None):
    """Train a copy of ``model``; returns ``(model, centroids, TrainLog)``.

    ``centroids`` is required for the ``pedcc`` loss and returned unchanged
    (the same object) unless ``plan.finetune_epoch`` is set.
    """
    spec = plan.loss
    c = data.num_classes
    if spec.kind == "pedcc":
        if centroids is None:
            raise ConfigError("the pedcc loss needs a centroid set")
        if centroids.dim != model.d_feat:
            raise ConfigError(f"centroid dim {centroids.dim} != model output dim {model.d_feat}")
        if centroids.num_classes < c:
            raise ConfigError(f"{c} classes in the data but only {centroids.num_classes} centroids")
        c = centroids.num_classes
    if data.dim != model.d_in:
        raise ConfigError(f"data has {data.dim} features, model expects {model.d_in}")
    eval_data = eval_data if eval_data is not None else data

    rng = Rng(plan.seed)
    model = model.copy()
    if data.stats is not None:
        model.input_stats = data.stats
    if spec.kind != "pedcc" and model.head is None:
        model.head = init_head(spec.kind, c, model.d_feat, rng.split())
    center_state = CenterState(np.zeros((c, model.d_feat)), spec.center_rate) if spec.kind == "center" else None

    start_centers = centroids.centers if centroids is not None else None
    P = None if centroids is None else np.array(centroids.centers)
    vw = [np.zeros_like(w) for w in model.weights]
    vb = [np.zeros_like(b) for b in model.biases]
    vhead = None if model.head is None else {k: None if v is None else np.zeros_like(v)
                                             for k, v in model.head.items()}
    vP = None if P is None else np.zeros_like(P)
    touched_centroids = False
    log = TrainLog()

    n = len(data)
    for epoch in range(1, plan.epochs + 1):
        t0 = time.perf_counter()
        lr = plan.lr_at(epoch)
        finetune = spec.kind == "pedcc" and plan.finetuning(epoch)
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for s in range(0, n, plan.batch_size):
            idx = order[s:s + plan.batch_size]
            x, y = data.inputs[idx], data.labels[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                feats, cache = forward(model, x)
            if not np.all(np.isfinite(feats)):
                raise NonFiniteLossError(epoch, f"non-finite features at epoch {epoch}")
            res, center_state = batch_loss(model, feats, y, spec, P, center_state, finetune)
            if not math.isfinite(res.value):
                raise NonFiniteLossError(epoch)
            total += res.value * idx.size
            correct += int(np.sum(predict(model, feats, spec.kind, P) == y))

            gw, gb, _ = backward(model, cache, res.grad_features)
            model.weights, vw = sgd_step(model.weights, gw, vw, lr, plan.momentum, plan.weight_decay)
            model.biases, vb = sgd_step(model.biases, gb, vb, lr, plan.momentum, 0.0)
            if model.head is not None:
                (model.head["weights"],), (vhead["weights"],) = sgd_step(
                    [model.head["weights"]], [res.grad_weights], [vhead["weights"]],
                    lr, plan.momentum, plan.weight_decay)
                if model.head["bias"] is not None:
                    (model.head["bias"],), (vhead["bias"],) = sgd_step(
                        [model.head["bias"]], [res.grad_bias], [vhead["bias"]], lr, plan.momentum, 0.0)
            if finetune:
                (P,), (vP,) = sgd_step([P], [res.grad_weights], [vP], plan.finetune_lr, plan.momentum, 0.0)
                P = l2_normalize_rows(P)
                touched_centroids = True

        if not all(np.all(np.isfinite(w)) for w in model.weights):
            raise NonFiniteLossError(epoch, f"non-finite parameters at epoch {epoch}")

        eval_feats, _ = forward(model, eval_data.inputs)
        eval_pred = predict(model, eval_feats, spec.kind, P)
        ref = reference_directions(model, eval_feats, eval_data.labels, spec.kind, P, c)
        rec = EpochRecord(
            epoch=epoch,
            loss=total / n,
            train_acc=correct / n,
            eval_acc=float(np.mean(eval_pred == eval_data.labels)),
            mean_cos=mean_cos_to(eval_feats, eval_data.labels, ref),
            seconds=time.perf_counter() - t0,
        )
        if P is not None:
            chord = row_norms(P - start_centers)
            rec.centroid_drift_deg = np.degrees(2.0 * np.arcsin(np.minimum(chord / 2.0, 1.0)))
            rec.max_centroid_norm_error = float(np.max(np.abs(row_norms(P) - 1.0)))
        log.append(rec)
        if epoch_callback is not None:
            epoch_callback(rec, model, P)

    out_centroids = centroids
    if touched_centroids:
        out_centroids = centroids.with_centers(P)
    return model, out_centroids, log


def features_of(model: MlpModel, inputs):
    return forward(model, inputs)[0]

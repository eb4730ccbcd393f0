"""Classification losses with hand-derived gradients.

Every loss takes a :class:`FeatureBatch` of raw (unnormalised) features and
returns a :class:`LossResult` whose ``grad_features`` is the derivative with
respect to those raw features. Cosine-space losses normalise internally and
push the gradient back through the normalisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .centroids import CentroidSet
from .errors import ConfigError, DimensionMismatchError
from .numeric import as_matrix, l2_normalize_rows, row_norms

ROOT_EPS = 1e-12
ANGULAR_CLAMP = 1e-7


@dataclass
class FeatureBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.shape[0] < 1:
            raise DimensionMismatchError("a batch needs at least one sample")
        if self.labels.shape[0] != self.features.shape[0]:
            raise DimensionMismatchError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.labels.min() < 0:
            raise DimensionMismatchError("labels must be non-negative")

    @property
    def size(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class MarginConfig:
    scale_s: float = 30.0
    margin_m: float = 0.5
    margin_mode: str = "additive-cosine"

    def __post_init__(self):
        if not self.scale_s > 0:
            raise ConfigError("scale_s must be positive")
        if self.margin_m < 0:
            raise ConfigError("margin_m must be non-negative")
        if self.margin_mode not in ("additive-cosine", "additive-angular"):
            raise ConfigError(f"unknown margin_mode {self.margin_mode!r}")
        if self.margin_mode == "additive-angular" and not self.margin_m < math.pi / 2:
            raise ConfigError("additive-angular margin must be below pi/2")


@dataclass
class LossResult:
    """Loss value and gradients.

    ``terms`` are addends whose sum is ``value`` up to rounding (a few per
    sample for batch-mean losses); :func:`check_gradient` differences them
    term by term.
    """

    value: float
    grad_features: np.ndarray
    grad_weights: Optional[np.ndarray] = None
    grad_bias: Optional[np.ndarray] = None
    terms: Optional[np.ndarray] = None


@dataclass
class CenterState:
    centers: np.ndarray
    update_rate: float = 0.5

    def __post_init__(self):
        self.centers = as_matrix(self.centers, "centers")
        if not 0 < self.update_rate <= 1:
            raise ConfigError("update_rate must lie in (0, 1]")


def _check_classes(batch: FeatureBatch, weights: np.ndarray):
    if weights.shape[1] != batch.dim:
        raise DimensionMismatchError(
            f"weights have dim {weights.shape[1]}, features have dim {batch.dim}")
    if batch.labels.max() >= weights.shape[0]:
        raise DimensionMismatchError(
            f"label {int(batch.labels.max())} out of range for {weights.shape[0]} classes")


def _cross_entropy(logits, labels):
    """Per-sample NLL of ``labels`` under softmax(logits), d(mean NLL)/d(logits), and addends.

    The addends are ``[top logit, -target logit, log1p(rest)]`` per sample.
    They sum to the NLL; splitting them lets a perturbation of one logit show
    up in a small, precisely known addend instead of a large total.
    """
    n = logits.shape[0]
    rows = np.arange(n)
    top = logits.argmax(axis=1)
    shifted = logits - logits[rows, top][:, None]
    e = np.exp(shifted)
    e[rows, top] = 0.0
    # log1p keeps full relative precision for nearly-saturated rows
    lse = np.log1p(e.sum(axis=1))
    nll = lse - shifted[rows, labels]
    probs = np.exp(shifted - lse[:, None])
    probs[rows, labels] -= 1.0
    addends = np.stack([logits[rows, top], -logits[rows, labels], lse], axis=1)
    return nll, probs / n, addends


def _normalize_backward(grad_unit, unit, norms):
    """Map d/d(x/|x|) to d/dx."""
    radial = np.einsum("ij,ij->i", grad_unit, unit)
    return (grad_unit - radial[:, None] * unit) / norms[:, None]


def softmax_ce(batch: FeatureBatch, weights, bias=None) -> LossResult:
    """Mean softmax cross-entropy of logits ``x W^T + b``."""
    w = as_matrix(weights, "weights")
    _check_classes(batch, w)
    logits = batch.features @ w.T
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (w.shape[0],):
            raise DimensionMismatchError(f"bias shape {bias.shape} != ({w.shape[0]},)")
        logits = logits + bias
    nll, g, addends = _cross_entropy(logits, batch.labels)
    return LossResult(float(np.mean(nll)), g @ w, g.T @ batch.features, g.sum(axis=0),
                      terms=addends.ravel() / batch.size)


def margin_logits(cos, labels, cfg: MarginConfig):
    """Scaled logits with the margin applied to the target column.

    Returns the logits and d(target logit)/d(target cosine) divided by ``s``.
    """
    rows = np.arange(cos.shape[0])
    target = cos[rows, labels]
    if cfg.margin_mode == "additive-cosine":
        psi = target - cfg.margin_m
        dpsi = np.ones_like(target)
    else:
        lo, hi = -1.0 + ANGULAR_CLAMP, 1.0 - ANGULAR_CLAMP
        clamped = np.clip(target, lo, hi)
        theta = np.arccos(clamped)
        psi = np.cos(theta + cfg.margin_m)
        # d cos(theta + m) / d cos(theta) = cos m + sin m * cot(theta)
        dpsi = math.cos(cfg.margin_m) + math.sin(cfg.margin_m) * clamped / np.sin(theta)
        dpsi = np.where((target < lo) | (target > hi), 0.0, dpsi)
    logits = cfg.scale_s * cos
    logits[rows, labels] = cfg.scale_s * psi
    return logits, dpsi


def am_softmax(batch: FeatureBatch, weights, cfg: MarginConfig | None = None,
               weight_grad: bool = False) -> LossResult:
    """Additive-margin softmax on normalised features and normalised weights."""
    cfg = cfg or MarginConfig()
    w = as_matrix(weights, "weights")
    _check_classes(batch, w)
    x_norm = row_norms(batch.features)
    xu = l2_normalize_rows(batch.features)
    w_norm = row_norms(w)
    wu = l2_normalize_rows(w)

    cos = xu @ wu.T
    logits, dpsi = margin_logits(cos, batch.labels, cfg)
    nll, g, addends = _cross_entropy(logits, batch.labels)
    g_cos = cfg.scale_s * g
    rows = np.arange(batch.size)
    g_cos[rows, batch.labels] *= dpsi

    grad_x = _normalize_backward(g_cos @ wu, xu, x_norm)
    grad_w = _normalize_backward(g_cos.T @ xu, wu, w_norm) if weight_grad else None
    return LossResult(float(np.mean(nll)), grad_x, grad_w, terms=addends.ravel() / batch.size)


def cosine_softmax(batch: FeatureBatch, weights, scale: float = 1.0) -> LossResult:
    """Softmax cross-entropy on ``scale * cos`` logits, no margin."""
    return am_softmax(batch, weights, MarginConfig(scale_s=scale, margin_m=0.0))


def center_loss(batch: FeatureBatch, state: CenterState, reduction: str = "sum"):
    """``1/2 sum_i |x_i - c_{y_i}|^2`` and the center update.

    Returns ``(LossResult, CenterState)``; the input state is not modified.
    Each class present in the batch moves its center toward the batch mean of
    that class by ``update_rate``. ``reduction="mean"`` divides by batch size.
    """
    _check_classes(batch, state.centers)
    if reduction not in ("sum", "mean"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    diff = batch.features - state.centers[batch.labels]
    scale = 1.0 if reduction == "sum" else 1.0 / batch.size
    per_sample = 0.5 * scale * np.einsum("ij,ij->i", diff, diff)
    value = float(np.sum(per_sample))

    c = state.centers.shape[0]
    counts = np.bincount(batch.labels, minlength=c).astype(np.float64)
    sums = np.zeros_like(state.centers)
    np.add.at(sums, batch.labels, batch.features)
    present = counts > 0
    centers = state.centers.copy()
    means = sums[present] / counts[present, None]
    centers[present] += state.update_rate * (means - centers[present])
    return (LossResult(value, scale * diff, terms=per_sample),
            CenterState(centers, state.update_rate))


def _centroid_matrix(centroids):
    if isinstance(centroids, CentroidSet):
        return centroids.centers
    return as_matrix(centroids, "centroids")


def pedcc_am(batch: FeatureBatch, centroids, cfg: MarginConfig | None = None,
             finetune: bool = False) -> LossResult:
    """Additive-margin softmax whose class weights are the fixed centroids.

    ``grad_weights`` is only produced when ``finetune`` is set.
    """
    return am_softmax(batch, _centroid_matrix(centroids), cfg, weight_grad=finetune)


def pedcc_mse(batch: FeatureBatch, centroids, normalize_before_mse: bool = True,
              finetune: bool = False) -> LossResult:
    """Batch mean of ``1/2 |x_i - p_{y_i}|^2`` between features and own centroids.

    With ``normalize_before_mse`` (default) the feature is projected to the unit
    sphere first, so the loss is scale invariant and bounded by 2 per sample.
    """
    p = _centroid_matrix(centroids)
    _check_classes(batch, p)
    n = batch.size
    if normalize_before_mse:
        x_norm = row_norms(batch.features)
        x = l2_normalize_rows(batch.features)
    else:
        x = batch.features
    diff = x - p[batch.labels]
    per_sample = 0.5 * np.einsum("ij,ij->i", diff, diff) / n
    value = float(np.sum(per_sample))
    grad_x = diff / n
    if normalize_before_mse:
        grad_x = _normalize_backward(grad_x, x, x_norm)
    grad_w = None
    if finetune:
        grad_w = np.zeros_like(p)
        np.add.at(grad_w, batch.labels, -diff / n)
    return LossResult(value, grad_x, grad_w, terms=per_sample)


def root_term(mse_value: float, n: int):
    """``L ** (1/n)`` and its derivative, evaluated at ``max(L, ROOT_EPS)``."""
    if n == 1:
        return mse_value, 1.0
    inv = 1.0 / n
    return mse_value**inv, inv * max(mse_value, ROOT_EPS) ** (inv - 1.0)


def pedcc_loss(batch: FeatureBatch, centroids, cfg: MarginConfig | None = None, n: int = 1,
               normalize_before_mse: bool = True, finetune: bool = False) -> LossResult:
    """Fixed-centroid margin loss plus the ``n``-th root of the centroid MSE."""
    if int(n) != n or n < 1:
        raise ConfigError(f"root factor n must be an integer >= 1, got {n}")
    n = int(n)
    am = pedcc_am(batch, centroids, cfg, finetune=finetune)
    mse = pedcc_mse(batch, centroids, normalize_before_mse, finetune=finetune)
    root, droot = root_term(mse.value, n)
    grad_w = None
    if finetune:
        grad_w = am.grad_weights + droot * mse.grad_weights
    return LossResult(am.value + root, am.grad_features + droot * mse.grad_features, grad_w,
                      terms=np.append(am.terms, root))


def check_gradient(fn: Callable, x, h: float = 1e-5, grad=None) -> float:
    """Worst relative error between ``fn``'s analytic gradient and central differences.

    ``fn(x)`` returns ``(value, grad)``. ``value`` may be an array of addends
    (``LossResult.terms``); the two perturbed evaluations are then differenced
    addend by addend before summing, so terms untouched by the perturbation
    cancel exactly. Pass ``grad`` to check a gradient other than the one ``fn``
    reports (negative controls). The per-coordinate relative error is
    ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"h must lie in [1e-7, 1e-3], got {h}")
    x = np.array(x, dtype=np.float64)
    if grad is None:
        grad = fn(x)[1]
    grad = np.asarray(grad, dtype=np.float64)
    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    out = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = np.asarray(fn(x)[0], dtype=np.float64)
        flat[i] = orig - h
        down = np.asarray(fn(x)[0], dtype=np.float64)
        flat[i] = orig
        out[i] = math.fsum(np.ravel(up - down)) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(grad - numeric) / denom))

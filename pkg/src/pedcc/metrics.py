"""Feature-space quality measures."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyClassError, ParseError
from .losses import FeatureBatch
from .numeric import l2_normalize_rows, row_norms


@dataclass
class EvalReport:
    within_class_scatter_trace: float
    between_class_scatter_trace: float
    separability_ratio: float
    nearest_centroid_accuracy: float
    mean_cos_to_own_centroid: float
    per_class_mean_cos: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass
class PairVerdictSet:
    pairs: np.ndarray  # (m, 2) int indices
    same: np.ndarray   # (m,) bool
    threshold: float = float("nan")
    accuracy: float = float("nan")

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.same = np.asarray(self.same, dtype=bool).reshape(-1)
        if self.pairs.shape[0] != self.same.shape[0]:
            raise ValueError("one same/different flag is needed per pair")

    def __len__(self):
        return self.pairs.shape[0]


def _class_means(x, labels, c):
    counts = np.bincount(labels, minlength=c)
    sums = np.zeros((c, x.shape[1]))
    np.add.at(sums, labels, x)
    return sums, counts


def scatter_metrics(batch: FeatureBatch, class_priors=None, full=False):
    """Traces of the within-class and between-class scatter.

    ``within = sum_k P_k E_k |x - mu_k|^2``, ``between = sum_k P_k |mu_k - mu|^2``
    with ``mu = sum_k P_k mu_k``. Priors default to the empirical class
    frequencies; with those, ``within + between`` is the total variance trace.
    Only classes present in the batch are used unless priors are given, in
    which case every class with non-zero prior must have a sample.
    With ``full=True`` the two scatter matrices are returned as well.
    """
    x, y = batch.features, batch.labels
    c = int(y.max()) + 1
    if class_priors is not None:
        priors = np.asarray(class_priors, dtype=np.float64)
        c = max(c, priors.shape[0])
        priors = np.pad(priors, (0, c - priors.shape[0]))
    sums, counts = _class_means(x, y, c)
    if class_priors is None:
        priors = counts / counts.sum()
    else:
        empty = np.flatnonzero((priors > 0) & (counts == 0))
        if empty.size:
            raise EmptyClassError(f"class {int(empty[0])} has a prior but no samples")
        priors = priors / priors.sum()
    used = priors > 0
    means = np.zeros_like(sums)
    means[used] = sums[used] / counts[used, None]
    mu = priors @ means

    dev = x - means[y]
    per_class_within = np.zeros(c)
    np.add.at(per_class_within, y, np.einsum("ij,ij->i", dev, dev))
    per_class_within[used] /= counts[used]
    within = float(priors @ per_class_within)
    md = means - mu
    between = float(priors @ np.einsum("ij,ij->i", md, md))
    if not full:
        return within, between
    w_mat = np.zeros((x.shape[1],) * 2)
    for k in np.flatnonzero(used):
        dk = dev[y == k]
        w_mat += priors[k] * (dk.T @ dk) / counts[k]
    b_mat = (md[used] * priors[used, None]).T @ md[used]
    return within, between, w_mat, b_mat


def nearest_centroid_predict(features, centroids):
    """Index of the centroid with the largest cosine; ties go to the lowest index."""
    p = centroids.centers if hasattr(centroids, "centers") else np.asarray(centroids)
    return (l2_normalize_rows(features) @ l2_normalize_rows(p).T).argmax(axis=1)


def nearest_centroid_accuracy(batch: FeatureBatch, centroids) -> float:
    return float(np.mean(nearest_centroid_predict(batch.features, centroids) == batch.labels))


def cosine_to_own(batch: FeatureBatch, centroids):
    p = centroids.centers if hasattr(centroids, "centers") else np.asarray(centroids)
    u = l2_normalize_rows(batch.features)
    return np.einsum("ij,ij->i", u, l2_normalize_rows(p)[batch.labels])


def evaluate(batch: FeatureBatch, centroids, normalized_scatter=True) -> EvalReport:
    """Full report; scatter is measured on unit-normalised features by default."""
    feats = l2_normalize_rows(batch.features) if normalized_scatter else batch.features
    within, between = scatter_metrics(FeatureBatch(feats, batch.labels))
    cos = cosine_to_own(batch, centroids)
    c = int(batch.labels.max()) + 1
    per_class = [float(cos[batch.labels == k].mean()) if np.any(batch.labels == k) else float("nan")
                 for k in range(c)]
    return EvalReport(
        within_class_scatter_trace=within,
        between_class_scatter_trace=between,
        separability_ratio=between / within if within > 0 else float("inf"),
        nearest_centroid_accuracy=nearest_centroid_accuracy(batch, centroids),
        mean_cos_to_own_centroid=float(cos.mean()),
        per_class_mean_cos=per_class,
    )


def pair_similarities(features, pairs):
    f = np.asarray(features, dtype=np.float64)
    idx = pairs.pairs if isinstance(pairs, PairVerdictSet) else np.asarray(pairs).reshape(-1, 2)
    if idx.size and (idx.min() < 0 or idx.max() >= f.shape[0]):
        raise IndexError("pair index out of range")
    a = f[idx[:, 0]]
    b = f[idx[:, 1]]
    return np.einsum("ij,ij->i", a, b) / (row_norms(a) * row_norms(b))


def best_threshold(scores, same):
    """Accuracy-maximising threshold for ``score > t => same``.

    Candidates are the midpoints between consecutive distinct sorted scores
    plus one threshold below and one above every score. Returns
    ``(accuracy, threshold)``; ties keep the lowest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    m = scores.size
    if m == 0:
        raise ValueError("no pairs to verify")
    order = np.argsort(scores, kind="stable")
    s, t = scores[order], same[order]
    uniq, start = np.unique(s, return_index=True)
    # threshold placed just below uniq[k] predicts "same" for s >= uniq[k]
    cum_diff_below = np.concatenate([[0], np.cumsum(~t)])  # differents strictly below position
    cum_same_above = np.concatenate([np.cumsum(t[::-1])[::-1], [0]])
    cuts = np.append(start, m)
    correct = cum_diff_below[cuts] + cum_same_above[cuts]
    k = int(np.argmax(correct))
    if k == 0:
        thr = uniq[0] - 1.0
    elif k == len(uniq):
        thr = uniq[-1] + 1.0
    else:
        thr = 0.5 * (uniq[k - 1] + uniq[k])
    return float(correct[k] / m), float(thr)


def pair_verification(features, pairs: PairVerdictSet):
    """Cosine pair verification at the best threshold; fills ``pairs`` in place too."""
    if len(pairs) == 0:
        raise ValueError("no pairs to verify")
    acc, thr = best_threshold(pair_similarities(features, pairs), pairs.same)
    pairs.accuracy, pairs.threshold = acc, thr
    return acc, thr


def read_pairs(path) -> PairVerdictSet:
    """CSV with header ``index_a,index_b,same`` (same is 0/1 or true/false)."""
    pairs, same = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header[:3] != ["index_a", "index_b", "same"]:
            raise ParseError("header must be index_a,index_b,same", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                a, b = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise ParseError("pair indices must be integers", line=lineno) from None
            flag = row[2].strip().lower() if len(row) > 2 else ""
            if flag not in ("0", "1", "true", "false"):
                raise ParseError(f"same flag {flag!r} must be 0/1/true/false", line=lineno)
            pairs.append((a, b))
            same.append(flag in ("1", "true"))
    return PairVerdictSet(np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(same, dtype=bool))

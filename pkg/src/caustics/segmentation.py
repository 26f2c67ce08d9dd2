"""Caustics/non-caustics mask production and evaluation.

Built-in classical classifiers (luminosity thresholding, kNN, decision
tree), sliding-window patch machinery with overlap-averaged scores,
external-mask ingestion, and the pixel classification metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DimensionError, NotFittedError, ParameterError
from .image import BinaryMask, LabImage, RasterImage, rgb_to_lab

FEATURE_WINDOW = 5
N_FEATURES = 5


@dataclass(frozen=True)
class PatchGrid:
    """Row-major top-left patch origins covering the full image."""

    patch_size: int
    stride: int
    origins: np.ndarray  # (N, 2) int, columns (x, y)

    @property
    def count(self) -> int:
        return len(self.origins)


def _axis_origins(dim: int, patch: int, stride: int) -> list[int]:
    origins = list(range(0, dim - patch + 1, stride))
    if origins[-1] + patch < dim:
        origins.append(dim - patch)
    return origins


def extract_patches(img: RasterImage, patch: int = 128, stride: int = 32) -> PatchGrid:
    """Sliding-window origins; the final row/column is clamped to the edge."""
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if patch > min(img.width, img.height):
        raise ParameterError(
            f"patch size {patch} exceeds image dimensions {img.width}x{img.height}"
        )
    xs = _axis_origins(img.width, patch, stride)
    ys = _axis_origins(img.height, patch, stride)
    origins = np.array([(x, y) for y in ys for x in xs], dtype=int)
    return PatchGrid(patch, stride, origins)


def compute_pixel_features(lab: LabImage, window: int = FEATURE_WINDOW) -> np.ndarray:
    """Per-pixel feature vectors: (l, alpha, beta, local mean of l, local std of l)."""
    l = lab.l.astype(np.float64)
    mean = ndimage.uniform_filter(l, size=window, mode="nearest")
    mean_sq = ndimage.uniform_filter(l * l, size=window, mode="nearest")
    std = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
    feats = np.stack([lab.l, lab.alpha, lab.beta, mean, std], axis=-1)
    return feats.astype(np.float32)


class Classifier:
    """Scores image patches with the probability of the non-caustics class."""

    def score_patch(self, features: np.ndarray, origin: tuple[int, int]) -> np.ndarray:
        """Per-pixel P(non-caustics) for one (h, w, 5) feature patch."""
        raise NotImplementedError


class ThresholdingClassifier(Classifier):
    """Pixel is caustics iff its l value exceeds the threshold."""

    def __init__(self, t_l: float):
        self.t_l = float(t_l)

    def score_patch(self, features: np.ndarray, origin: tuple[int, int]) -> np.ndarray:
        return (features[:, :, 0] <= self.t_l).astype(np.float64)


class KnnClassifier(Classifier):
    """k-nearest-neighbors vote (k = 5, Euclidean) over pixel features."""

    def __init__(self, k: int = 5):
        self.k = k
        self._tree: cKDTree | None = None
        self._labels: np.ndarray | None = None

    def fit(self, features: np.ndarray, caustics_labels: np.ndarray) -> "KnnClassifier":
        self._tree = cKDTree(np.asarray(features, dtype=np.float64))
        self._labels = np.asarray(caustics_labels, dtype=bool)
        return self

    def score_patch(self, features: np.ndarray, origin: tuple[int, int]) -> np.ndarray:
        if self._tree is None:
            raise NotFittedError("kNN classifier used before training")
        h, w, _ = features.shape
        k = min(self.k, len(self._labels))
        _, idx = self._tree.query(features.reshape(-1, features.shape[-1]), k=k)
        if k == 1:
            idx = idx[:, None]
        votes_non_caustics = (~self._labels[idx]).mean(axis=1)
        return votes_non_caustics.reshape(h, w)


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None
    p_non_caustics: float = 0.5

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _best_split(features: np.ndarray, labels: np.ndarray) -> tuple[int, float, float] | None:
    # Returns (feature, threshold, weighted child impurity); candidates are
    # scanned in feature-index order and ascending threshold so ties resolve
    # deterministically toward the lowest feature index.
    n = len(labels)
    best = None
    for f in range(features.shape[1]):
        order = np.argsort(features[:, f], kind="stable")
        values = features[order, f]
        lab = labels[order]
        distinct = np.nonzero(np.diff(values))[0]
        if len(distinct) == 0:
            continue
        pos_left = np.cumsum(lab)  # caustics count left of each boundary
        for i in distinct:
            nl = i + 1
            nr = n - nl
            cl = int(pos_left[i])
            cr = int(pos_left[-1]) - cl
            imp = (
                nl * _gini(np.array([cl, nl - cl]))
                + nr * _gini(np.array([cr, nr - cr]))
            ) / n
            if best is None or imp < best[2] - 1e-12:
                thr = (values[i] + values[i + 1]) / 2.0
                best = (f, float(thr), imp)
    return best


class DecisionTreeClassifier(Classifier):
    """CART-style tree: Gini impurity, max depth 12, deterministic tie-breaking."""

    def __init__(self, max_depth: int = 12):
        self.max_depth = max_depth
        self._root: _TreeNode | None = None

    def fit(self, features: np.ndarray, caustics_labels: np.ndarray) -> "DecisionTreeClassifier":
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(caustics_labels, dtype=bool)
        self._root = self._build(features, labels, depth=0)
        return self

    def _build(self, features: np.ndarray, labels: np.ndarray, depth: int) -> _TreeNode:
        node = _TreeNode(p_non_caustics=float((~labels).mean()))
        n_caustics = int(labels.sum())
        if depth >= self.max_depth or n_caustics == 0 or n_caustics == len(labels):
            return node
        split = _best_split(features, labels)
        if split is None:
            return node
        f, thr, _ = split
        go_left = features[:, f] <= thr
        node.feature = f
        node.threshold = thr
        node.left = self._build(features[go_left], labels[go_left], depth + 1)
        node.right = self._build(features[~go_left], labels[~go_left], depth + 1)
        return node

    def _predict(self, flat: np.ndarray) -> np.ndarray:
        out = np.empty(len(flat), dtype=np.float64)
        stack = [(self._root, np.arange(len(flat)))]
        while stack:
            node, idx = stack.pop()
            if len(idx) == 0:
                continue
            if node.is_leaf:
                out[idx] = node.p_non_caustics
                continue
            go_left = flat[idx, node.feature] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def score_patch(self, features: np.ndarray, origin: tuple[int, int]) -> np.ndarray:
        if self._root is None:
            raise NotFittedError("decision tree used before training")
        h, w, _ = features.shape
        return self._predict(features.reshape(-1, features.shape[-1])).reshape(h, w)


def train_classifier(kind: str, features: np.ndarray, caustics_labels: np.ndarray) -> Classifier:
    """Train a kNN or decision-tree pixel classifier.

    Args:
        kind: "knn" or "decision_tree".
        features: (N, 5) feature vectors.
        caustics_labels: (N,) bool, True for caustics pixels.
    """
    labels = np.asarray(caustics_labels, dtype=bool)
    if labels.all() or not labels.any():
        raise ParameterError("training set must contain both classes")
    if kind == "knn":
        return KnnClassifier().fit(features, labels)
    if kind == "decision_tree":
        return DecisionTreeClassifier().fit(features, labels)
    raise ParameterError(f"unknown classifier kind {kind!r}")


def threshold_classifier(lab: LabImage, t_l: float) -> BinaryMask:
    """Direct thresholding of the l channel: caustics iff l > t_l."""
    return BinaryMask(lab.l > t_l)


def predict_mask(img: RasterImage, classifier: Classifier, grid: PatchGrid) -> BinaryMask:
    """Score every patch, average over overlaps, threshold at 0.5.

    A pixel is labeled non-caustics when its averaged score strictly exceeds
    0.5; the 0.5 tie resolves to caustics so doubtful pixels get replaced.
    """
    if img.channels != 3:
        raise DimensionError("predict_mask needs a 3-channel image")
    feats = compute_pixel_features(rgb_to_lab(img))
    score_sum = np.zeros((img.height, img.width), dtype=np.float64)
    cover = np.zeros((img.height, img.width), dtype=np.int64)
    p = grid.patch_size
    for x, y in grid.origins:
        patch = feats[y : y + p, x : x + p]
        score_sum[y : y + p, x : x + p] += classifier.score_patch(patch, (int(x), int(y)))
        cover[y : y + p, x : x + p] += 1
    if np.any(cover == 0):
        raise ParameterError("patch grid does not cover the full image")
    avg = score_sum / cover
    return BinaryMask(~(avg > 0.5))


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel counts with non-caustics as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    f1_caustics: float
    f1_non_caustics: float
    accuracy: float
    counts: ConfusionCounts
    zero_support_classes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "f1_caustics": self.f1_caustics,
            "f1_non_caustics": self.f1_non_caustics,
            "accuracy": self.accuracy,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "tn": self.counts.tn,
            "fn": self.counts.fn,
        }


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2.0 * tp / denom


def compute_metrics(pred: BinaryMask, truth: BinaryMask) -> MetricsReport:
    """Per-class F1 (harmonic mean of precision and recall) and accuracy."""
    if (pred.height, pred.width) != (truth.height, truth.width):
        raise DimensionError("prediction and truth masks must share dimensions")
    pred_nc = pred.non_caustics
    truth_nc = truth.non_caustics
    tp = int(np.sum(pred_nc & truth_nc))
    fp = int(np.sum(pred_nc & ~truth_nc))
    fn = int(np.sum(~pred_nc & truth_nc))
    tn = int(np.sum(~pred_nc & ~truth_nc))
    counts = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)
    zero_support = []
    if tp + fn == 0:
        zero_support.append("non_caustics")
    if tn + fp == 0:
        zero_support.append("caustics")
    f1_nc = _f1(tp, fp, fn)
    f1_c = _f1(tn, fn, fp)
    accuracy = (tp + tn) / counts.total if counts.total else 0.0
    return MetricsReport(
        f1_caustics=f1_c,
        f1_non_caustics=f1_nc,
        accuracy=accuracy,
        counts=counts,
        zero_support_classes=tuple(zero_support),
    )


def mask_fraction(mask: BinaryMask) -> float:
    """Percentage of caustics pixels in the mask."""
    return 100.0 * float(mask.caustics.sum()) / mask.caustics.size

"""Orientation estimation: 8 one-vs-all linear SVMs over HOG features.

Margins are calibrated to [0, 1] scores with per-class logistic fits, the
8-vector of scores is smoothed along the orientation circle with a small
kernel, and the argmax (lowest label on ties) is the prediction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    N_ORIENTATIONS,
    DegenerateLabelsError,
    DimensionMismatchError,
    check_orientation,
    orientation_mod,
    orientation_distance,
    rng_from,
)
from .features import hog_descriptor, resize_bilinear

DEFAULT_KERNEL = (0.25, 0.5, 0.25)
DEFAULT_RESIZE = (128, 48)
DEFAULT_EPOCHS = 50
DEFAULT_REG = 1e-4


@dataclass
class OrientationClassifier:
    weights: np.ndarray  # (8, F)
    biases: np.ndarray  # (8,)
    calib_scale: np.ndarray  # (8,)
    calib_offset: np.ndarray  # (8,)
    resize: tuple[int, int] = DEFAULT_RESIZE

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def hog_features(img, resize: tuple[int, int] = DEFAULT_RESIZE) -> np.ndarray:
    """HOG vector of an image after bilinear resize to the working size."""
    px = img.pixels if hasattr(img, "pixels") else np.asarray(img)
    resized = resize_bilinear(px, resize[0], resize[1])
    return hog_descriptor(resized)


def _pegasos(feats, y, rng, epochs, reg):
    """Primal stochastic subgradient for hinge + L2; bias unregularized."""
    n, f = feats.shape
    w = np.zeros(f)
    b = 0.0
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            eta = 1.0 / (reg * t)
            margin = y[i] * (feats[i] @ w + b)
            w *= 1.0 - eta * reg
            if margin < 1.0:
                w += eta * y[i] * feats[i]
                b += eta * y[i]
    return w, b


def _platt(margins, positive, max_iter=60):
    """Logistic fit of P(class | margin) with smoothed targets.

    Returns (scale, offset) so the score is sigmoid(scale * margin + offset).
    """
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    t = np.where(positive, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, np.log((n_pos + 1.0) / (n_neg + 1.0))
    for _ in range(max_iter):
        z = a * margins + b
        p = 1.0 / (1.0 + np.exp(-z))
        g = p - t
        ga = g @ margins
        gb = g.sum()
        h = p * (1.0 - p)
        haa = (h * margins * margins).sum() + 1e-12
        hab = (h * margins).sum()
        hbb = h.sum() + 1e-12
        det = haa * hbb - hab * hab
        if abs(det) < 1e-12:
            break
        da = (hbb * ga - hab * gb) / det
        db = (haa * gb - hab * ga) / det
        a -= da
        b -= db
        if max(abs(da), abs(db)) < 1e-10:
            break
    return a, b


def fit_orientation_classifier(
    feats: np.ndarray,
    labels,
    seed,
    epochs: int = DEFAULT_EPOCHS,
    reg: float = DEFAULT_REG,
    resize: tuple[int, int] = DEFAULT_RESIZE,
) -> OrientationClassifier:
    """Train the 8 one-vs-all SVMs plus per-class calibration on features."""
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray([check_orientation(v) for v in labels])
    if feats.ndim != 2 or feats.shape[0] != len(labels):
        raise DimensionMismatchError(
            f"features {feats.shape} do not match {len(labels)} labels"
        )
    counts = np.bincount(labels, minlength=N_ORIENTATIONS + 1)[1:]
    if (counts == 0).any():
        missing = [i + 1 for i in np.flatnonzero(counts == 0)]
        raise DegenerateLabelsError(f"no training samples for orientation(s) {missing}")
    ss = np.random.SeedSequence(int(seed)) if not isinstance(seed, np.random.SeedSequence) else seed
    children = ss.spawn(N_ORIENTATIONS)
    f = feats.shape[1]
    weights = np.zeros((N_ORIENTATIONS, f))
    biases = np.zeros(N_ORIENTATIONS)
    scale = np.zeros(N_ORIENTATIONS)
    offset = np.zeros(N_ORIENTATIONS)
    for cls in range(1, N_ORIENTATIONS + 1):
        rng = rng_from(children[cls - 1])
        y = np.where(labels == cls, 1.0, -1.0)
        w, b = _pegasos(feats, y, rng, epochs, reg)
        weights[cls - 1] = w
        biases[cls - 1] = b
        m = feats @ w + b
        scale[cls - 1], offset[cls - 1] = _platt(m, labels == cls)
    return OrientationClassifier(
        weights=weights, biases=biases, calib_scale=scale, calib_offset=offset, resize=resize
    )


def train_orientation(
    images,
    seed,
    epochs: int = DEFAULT_EPOCHS,
    reg: float = DEFAULT_REG,
    resize: tuple[int, int] = DEFAULT_RESIZE,
) -> OrientationClassifier:
    """Image-level wrapper: HOG extraction then classifier fitting."""
    feats = np.stack([hog_features(img, resize) for img in images])
    labels = [img.orientation for img in images]
    if any(v is None for v in labels):
        raise DegenerateLabelsError("all training images need orientation labels")
    return fit_orientation_classifier(feats, labels, seed, epochs=epochs, reg=reg, resize=resize)


def margins_from_features(clf: OrientationClassifier, feats: np.ndarray) -> np.ndarray:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[-1] != clf.n_features:
        raise DimensionMismatchError(
            f"expected {clf.n_features} features, got {feats.shape[-1]}"
        )
    return feats @ clf.weights.T + clf.biases


def raw_scores_from_features(clf: OrientationClassifier, feats: np.ndarray) -> np.ndarray:
    """Calibrated per-class scores in [0, 1] (index i-1 holds label i)."""
    m = margins_from_features(clf, feats)
    return 1.0 / (1.0 + np.exp(-(clf.calib_scale * m + clf.calib_offset)))


def raw_scores(clf: OrientationClassifier, img) -> np.ndarray:
    return raw_scores_from_features(clf, hog_features(img, clf.resize))


def smooth_scores(psi: np.ndarray, kernel=DEFAULT_KERNEL) -> np.ndarray:
    """Circular smoothing: out_i = sum_k kernel[k] * psi at label i+k (wrapped).

    Out-of-place; kernel is (w_minus1, w_0, w_plus1).
    """
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape != (N_ORIENTATIONS,):
        raise DimensionMismatchError(f"expected 8 scores, got shape {psi.shape}")
    if len(kernel) != 3:
        raise ValueError("kernel must have 3 taps")
    out = np.zeros(N_ORIENTATIONS)
    for i in range(1, N_ORIENTATIONS + 1):
        acc = 0.0
        for k, wk in zip((-1, 0, 1), kernel):
            acc += wk * psi[orientation_mod(i, k) - 1]
        out[i - 1] = acc
    return out


def predict_from_scores(psi: np.ndarray, kernel=DEFAULT_KERNEL) -> int:
    smoothed = smooth_scores(psi, kernel)
    return int(np.argmax(smoothed)) + 1  # first max = lowest label on ties


def predict_from_features(clf: OrientationClassifier, feats: np.ndarray, kernel=DEFAULT_KERNEL) -> int:
    return predict_from_scores(raw_scores_from_features(clf, feats), kernel)


def predict_orientation(clf: OrientationClassifier, img, kernel=DEFAULT_KERNEL) -> int:
    """Full pipeline: HOG, calibrated scores, smoothing, argmax."""
    return predict_from_scores(raw_scores(clf, img), kernel)


def accuracy_same(labels, preds) -> float:
    """Fraction predicted exactly right."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    return float((labels == preds).mean())


def accuracy_adjacent(labels, preds) -> float:
    """Fraction predicted within one orientation step (same or adjacent)."""
    dists = [orientation_distance(int(a), int(b)) for a, b in zip(labels, preds)]
    return float(np.mean([d <= 1 for d in dists]))

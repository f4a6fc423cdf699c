"""Metric learning over signatures: Gaussian kernel PCA then KISSME.

The metric matrix comes from the log-likelihood ratio of two zero-mean
Gaussians over pairwise differences. Writing the ratio out, the quadratic
form is (Sigma_pos^-1 - Sigma_neg^-1): directions where genuine (positive)
pairs vary little but impostor (negative) pairs vary a lot score large
distances. The result is clipped to the PSD cone so it is a valid metric.

Per-channel distance rows are min-max normalized per probe before the
weighted fusion across channels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .core import (
    Channel,
    DimensionMismatchError,
    NoValidPairsError,
    RankDeficientError,
    SingularCovarianceError,
    is_similar_orientation,
    orientation_distance,
    rng_from,
)

KISSME_JITTER = 1e-6
EIG_FLOOR = 1e-10

POLICY_ALL = "all"
POLICY_SIMILAR = "similar"
POLICY_SAME = "same"
POLICY_DISSIMILAR = "dissimilar"
PAIR_POLICIES = (POLICY_ALL, POLICY_SIMILAR, POLICY_SAME, POLICY_DISSIMILAR)


@dataclass
class KernelPcaModel:
    """Gaussian-kernel PCA fitted on reference vectors.

    alphas are the kept eigenvectors scaled by 1/sqrt(eigenvalue): at full
    rank the projected training vectors reproduce the centered kernel's
    inner products exactly.
    """

    refs: np.ndarray  # (n, D)
    alphas: np.ndarray  # (n, dim)
    eigenvalues: np.ndarray  # (dim,)
    bandwidth: float
    col_means: np.ndarray  # (n,)
    grand_mean: float

    @property
    def dim(self) -> int:
        return self.alphas.shape[1]


def _gaussian_kernel(A: np.ndarray, B: np.ndarray, bandwidth: float) -> np.ndarray:
    d2 = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def fit_kernel_pca(X: np.ndarray, dim: int, bandwidth: float) -> KernelPcaModel:
    """Double-center the Gaussian kernel matrix and keep the top-dim axes."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatchError(f"expected 2-D data, got shape {X.shape}")
    n = X.shape[0]
    dim = int(dim)
    if dim < 1 or dim > n:
        raise RankDeficientError(f"requested dim {dim} with {n} reference vectors")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    K = _gaussian_kernel(X, X, bandwidth)
    col_means = K.mean(axis=0)
    grand = float(K.mean())
    Kc = K - col_means[None, :] - col_means[:, None] + grand
    evals, evecs = np.linalg.eigh(Kc)
    order = np.argsort(evals, kind="stable")[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    usable = evals > EIG_FLOOR
    if usable.sum() < dim:
        raise RankDeficientError(
            f"kernel matrix has rank {int(usable.sum())}, requested dim {dim}"
        )
    evals = evals[:dim]
    alphas = evecs[:, :dim] / np.sqrt(evals)[None, :]
    return KernelPcaModel(
        refs=X.copy(),
        alphas=alphas,
        eigenvalues=evals,
        bandwidth=float(bandwidth),
        col_means=col_means,
        grand_mean=grand,
    )


def kpca_project(model: KernelPcaModel, x: np.ndarray) -> np.ndarray:
    """Project one vector or a batch into the learned subspace."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = np.atleast_2d(x)
    if batch.shape[1] != model.refs.shape[1]:
        raise DimensionMismatchError(
            f"expected {model.refs.shape[1]}-D input, got {batch.shape[1]}-D"
        )
    k = _gaussian_kernel(batch, model.refs, model.bandwidth)
    kc = k - k.mean(axis=1, keepdims=True) - model.col_means[None, :] + model.grand_mean
    out = kc @ model.alphas
    return out[0] if single else out


def _pair_orientation(rec):
    v = rec[2] if isinstance(rec, (tuple, list)) else getattr(rec, "orientation", None)
    if v in (None, 0):
        return None
    return int(v)


def _policy_admits(policy: str, oa, ob) -> bool:
    if policy not in PAIR_POLICIES:
        raise ValueError(f"unknown pair policy {policy!r}")
    if oa is None or ob is None:
        return True  # policies only constrain pairs with both labels known
    d = orientation_distance(oa, ob)
    if policy == POLICY_ALL:
        return True
    if policy == POLICY_SIMILAR:
        return d <= 1
    if policy == POLICY_SAME:
        return d == 0
    return d >= 2


def generate_pairs(
    records,
    pos_policy: str = POLICY_SIMILAR,
    neg_policy: str = POLICY_ALL,
    max_pairs: int | None = None,
    seed=0,
):
    """Index pairs for metric training.

    records: sequence of (person_id, camera_id, orientation) triples or
    objects with those attributes. Positives are cross-camera same-identity
    pairs passing pos_policy; negatives are different-identity pairs passing
    neg_policy, subsampled to the positive count.
    Returns (pos, neg) as (n, 2) int arrays.
    """
    for policy in (pos_policy, neg_policy):
        if policy not in PAIR_POLICIES:
            raise ValueError(f"unknown pair policy {policy!r}")

    def fields(rec):
        if isinstance(rec, (tuple, list)):
            return rec[0], rec[1]
        return rec.person_id, rec.camera_id

    n = len(records)
    person_keys = np.array([fields(r)[0] for r in records], dtype=object)
    _, person_idx = np.unique(person_keys, return_inverse=True)
    cameras = np.array([fields(r)[1] for r in records])
    orients = np.array([_pair_orientation(r) or 0 for r in records])

    ii, jj = np.triu_indices(n, k=1)
    same_person = person_idx[ii] == person_idx[jj]
    diff_camera = cameras[ii] != cameras[jj]
    oa, ob = orients[ii], orients[jj]
    both_known = (oa > 0) & (ob > 0)
    d = np.abs(oa - ob)
    d = np.minimum(d, 8 - d)

    def admits(policy):
        if policy == POLICY_ALL:
            return np.ones(len(ii), dtype=bool)
        if policy == POLICY_SIMILAR:
            constrained = d <= 1
        elif policy == POLICY_SAME:
            constrained = d == 0
        else:
            constrained = d >= 2
        return np.where(both_known, constrained, True)

    pos_mask = same_person & diff_camera & admits(pos_policy)
    neg_mask = ~same_person & admits(neg_policy)
    pos = np.stack([ii[pos_mask], jj[pos_mask]], axis=1)
    neg = np.stack([ii[neg_mask], jj[neg_mask]], axis=1)
    if len(pos) == 0:
        raise NoValidPairsError(f"no positive pairs under policy {pos_policy!r}")
    if len(neg) == 0:
        raise NoValidPairsError(f"no negative pairs under policy {neg_policy!r}")
    rng = rng_from(seed)
    if max_pairs is not None and len(pos) > max_pairs:
        pos = pos[rng.choice(len(pos), size=max_pairs, replace=False)]
    if len(neg) > len(pos):
        neg = neg[rng.choice(len(neg), size=len(pos), replace=False)]
    return pos, neg


@dataclass
class MetricModel:
    """PSD metric matrix, optionally tagged with its channel and the PCA
    projection it expects its inputs to have gone through."""

    matrix: np.ndarray
    channel: Channel | None = None
    pca: KernelPcaModel | None = None


def _difference_covariance(pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 3 or pairs.shape[1] != 2:
        raise DimensionMismatchError(f"expected (n, 2, d) pair array, got {pairs.shape}")
    diffs = pairs[:, 0, :] - pairs[:, 1, :]
    return diffs.T @ diffs / len(diffs)


def _invert_with_jitter(sigma: np.ndarray, label: str) -> np.ndarray:
    d = sigma.shape[0]
    try:
        return np.linalg.inv(sigma)
    except np.linalg.LinAlgError:
        jitter = KISSME_JITTER * np.trace(sigma) / d
        if jitter <= 0:
            jitter = KISSME_JITTER
        try:
            return np.linalg.inv(sigma + jitter * np.eye(d))
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError(f"{label} covariance singular after jitter") from exc


def fit_kissme(positives: np.ndarray, negatives: np.ndarray) -> MetricModel:
    """Metric from the two difference covariances, clipped to PSD.

    positives/negatives: (n, 2, d) stacks of vector pairs. Swapping the two
    members of any pair leaves the result unchanged.
    """
    sigma_pos = _difference_covariance(positives)
    sigma_neg = _difference_covariance(negatives)
    if sigma_pos.shape != sigma_neg.shape:
        raise DimensionMismatchError("positive and negative pair dimensions differ")
    M = _invert_with_jitter(sigma_pos, "positive") - _invert_with_jitter(sigma_neg, "negative")
    M = (M + M.T) / 2.0
    evals, evecs = np.linalg.eigh(M)
    clipped = np.clip(evals, 0.0, None)
    M = (evecs * clipped[None, :]) @ evecs.T
    return MetricModel(matrix=(M + M.T) / 2.0)


def mahalanobis(M, xi: np.ndarray, xj: np.ndarray) -> float:
    """Squared metric distance (xi - xj)^T M (xi - xj), clamped at zero."""
    mat = M.matrix if isinstance(M, MetricModel) else np.asarray(M)
    diff = np.asarray(xi, dtype=np.float64) - np.asarray(xj, dtype=np.float64)
    if diff.shape[-1] != mat.shape[0]:
        raise DimensionMismatchError(
            f"vectors are {diff.shape[-1]}-D, metric is {mat.shape[0]}-D"
        )
    return float(max(diff @ mat @ diff, 0.0))


def mahalanobis_rows(M, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise squared metric distances between two stacks of vectors."""
    mat = M.matrix if isinstance(M, MetricModel) else np.asarray(M)
    diff = np.asarray(A, dtype=np.float64) - np.asarray(B, dtype=np.float64)
    vals = np.einsum("nd,de,ne->n", diff, mat, diff)
    return np.clip(vals, 0.0, None)


def normalize_distances(row: np.ndarray) -> np.ndarray:
    """Min-max scale one probe's gallery distances to [0, 1].

    A constant row maps to zeros.
    """
    row = np.asarray(row, dtype=np.float64)
    lo = row.min()
    hi = row.max()
    if hi == lo:
        return np.zeros_like(row)
    return (row - lo) / (hi - lo)


@dataclass(frozen=True)
class FusionWeights:
    whsv: float = 2.0
    lab: float = 1.0
    sift: float = 1.0

    def get(self, ch: Channel) -> float:
        return {Channel.WHSV: self.whsv, Channel.LAB: self.lab, Channel.SIFT: self.sift}[ch]


def fuse_distances(per_channel: dict, weights: FusionWeights = FusionWeights()):
    """Weighted sum of per-channel distances (arrays or scalars)."""
    total = None
    for ch, val in per_channel.items():
        term = weights.get(Channel(ch)) * np.asarray(val, dtype=np.float64)
        total = term if total is None else total + term
    if total is None:
        raise NoValidPairsError("no channels to fuse")
    return total

"""Locality-constrained linear coding and signature assembly.

A descriptor x is reconstructed as a convex-sum-free affine combination of
codebook entries (coefficients sum to one) with a locality penalty: entries
far from x carry exponentially larger weights d_i, so the solution
concentrates on nearby entries. The exact path solves the full M x M
system; the fast path restricts to the k nearest entries and drops the
penalty apart from a small conditioning jitter, which is the standard
approximation.

Per part, codes are max-pooled coordinate-wise; the 8 pooled blocks are
concatenated and L2-normalized into one per-channel signature vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .core import Channel, DimensionMismatchError, SingularSystemError
from .codebook import BodyStructureCodebook
from .pyramid import N_PARTS, BodyStructurePyramid, assign_center_y

JITTER_EPS = 1e-8


@dataclass(frozen=True)
class LlcParams:
    """lam: locality penalty weight; sigma: decay of the distance weights
    (distances are shifted so the nearest entry has weight 1); k: number of
    neighbors used by the approximate path.
    """

    lam: float = 1e-4
    sigma: float = 1.0
    k: int = 5

    def __post_init__(self):
        if self.lam < 0 or self.sigma <= 0 or self.k < 1:
            raise ValueError(f"invalid LLC parameters {self}")


@dataclass(frozen=True)
class Signature:
    """Per-channel mid-level encoding of one image.

    vectors holds the L2-normalized concatenation of the 8 pooled part
    blocks; raw holds the same concatenation before normalization (needed
    when several shots are fused at the descriptor level).
    """

    vectors: dict
    raw: dict
    person_id: object = None
    camera_id: int | None = None
    orientation: int | None = None

    def channel(self, ch: Channel) -> np.ndarray:
        return self.vectors[ch]


def _solve_constrained(C: np.ndarray, lam_diag: np.ndarray | None) -> np.ndarray:
    """Solve C~ c = 1 then normalize to the sum-one hyperplane."""
    m = C.shape[0]
    if lam_diag is not None:
        C = C + np.diag(lam_diag)
    ones = np.ones(m)
    try:
        sol = np.linalg.solve(C, ones)
    except np.linalg.LinAlgError:
        jitter = JITTER_EPS * np.trace(C) / m
        if jitter <= 0:
            jitter = JITTER_EPS
        try:
            sol = np.linalg.solve(C + jitter * np.eye(m), ones)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError("coding system singular even after jitter") from exc
    total = sol.sum()
    if total == 0 or not np.isfinite(total):
        raise SingularSystemError("coding coefficients do not normalize")
    return sol / total


def llc_encode_exact(x: np.ndarray, entries: np.ndarray, params: LlcParams = LlcParams()) -> np.ndarray:
    """Exact locality-constrained code of x against all M entries.

    Minimizes ||x - B^T c||^2 + lam * ||d * c||^2 subject to sum(c) = 1,
    where d_i = exp((dist(x, b_i) - min_j dist(x, b_j)) / sigma).
    """
    x = np.asarray(x, dtype=np.float64)
    entries = np.asarray(entries, dtype=np.float64)
    if entries.ndim != 2 or x.shape != (entries.shape[1],):
        raise DimensionMismatchError(
            f"x has shape {x.shape}, entries {entries.shape}"
        )
    dist = np.linalg.norm(entries - x, axis=1)
    d = np.exp((dist - dist.min()) / params.sigma)
    z = entries - x
    C = z @ z.T
    return _solve_constrained(C, params.lam * d * d)


def llc_encode_knn_batch(
    X: np.ndarray, entries: np.ndarray, k: int = 5, lam: float = 1e-4
) -> np.ndarray:
    """Approximate codes for all rows of X at once.

    Each row is solved on its k nearest entries (ties by lower index) with
    the locality term dropped; a lam * trace(C) jitter keeps the small
    system well conditioned. Coefficients off the neighbor set are zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    entries = np.asarray(entries, dtype=np.float64)
    n, dim = X.shape
    m = entries.shape[0]
    if entries.shape[1] != dim:
        raise DimensionMismatchError(f"descriptors {dim}-D, entries {entries.shape[1]}-D")
    k = min(int(k), m)
    d2 = cdist(X, entries, "sqeuclidean")
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    Bk = entries[nn]
    z = Bk - X[:, None, :]
    C = np.einsum("nkd,nld->nkl", z, z)
    tr = np.einsum("nkk->n", C)
    jit = np.where(tr > 0, lam * tr, lam)
    C = C + jit[:, None, None] * np.eye(k)[None]
    ones = np.ones((n, k, 1))
    try:
        sol = np.linalg.solve(C, ones)[..., 0]
    except np.linalg.LinAlgError:
        sol = np.empty((n, k))
        for i in range(n):
            sol[i] = _solve_constrained(C[i], None)
    sums = sol.sum(axis=1, keepdims=True)
    if not np.isfinite(sums).all() or (sums == 0).any():
        raise SingularSystemError("coding coefficients do not normalize")
    w = sol / sums
    out = np.zeros((n, m))
    np.put_along_axis(out, nn, w, axis=1)
    return out


def llc_encode_knn(x: np.ndarray, entries: np.ndarray, k: int = 5, lam: float = 1e-4) -> np.ndarray:
    """Single-descriptor convenience wrapper around the batch path."""
    return llc_encode_knn_batch(np.asarray(x)[None, :], entries, k=k, lam=lam)[0]


def pool_part(codes: np.ndarray, m: int | None = None) -> np.ndarray:
    """Coordinate-wise max over a part's codes; empty input pools to zeros."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.size == 0:
        if m is None:
            raise ValueError("pooling an empty code set needs an explicit width")
        return np.zeros(m)
    return codes.max(axis=0)


def part_memberships(
    center_ys: np.ndarray, pyr: BodyStructurePyramid
) -> list[np.ndarray]:
    """Row indices of the patches belonging to each of the 8 parts."""
    rows: list[list[int]] = [[] for _ in range(N_PARTS)]
    cache: dict[int, tuple[int, int, int]] = {}
    for i, y in enumerate(np.asarray(center_ys)):
        y = int(y)
        if y not in cache:
            cache[y] = assign_center_y(pyr, y)
        for a in set(cache[y]):
            rows[a].append(i)
    return [np.asarray(r, dtype=np.int64) for r in rows]


def encode_channel_from_descriptors(
    desc: np.ndarray,
    center_ys: np.ndarray,
    cb: BodyStructureCodebook,
    pyr: BodyStructurePyramid,
    params: LlcParams = LlcParams(),
    memberships: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(normalized, raw) signature vector of one channel, length 8 * M."""
    desc = np.asarray(desc, dtype=np.float64)
    if memberships is None:
        memberships = part_memberships(center_ys, pyr)
    m = cb.m
    blocks = []
    for a in range(N_PARTS):
        rows = memberships[a]
        if len(rows) == 0:
            blocks.append(np.zeros(m))
            continue
        codes = llc_encode_knn_batch(desc[rows], cb.sub_codebooks[a].entries, k=params.k, lam=params.lam)
        blocks.append(codes.max(axis=0))
    raw = np.concatenate(blocks)
    norm = np.linalg.norm(raw)
    vec = raw / norm if norm > 0 else raw.copy()
    return vec, raw


def encode_image(
    img,
    codebooks: dict,
    params: LlcParams = LlcParams(),
    weight_map: np.ndarray | None = None,
    pyr: BodyStructurePyramid | None = None,
) -> Signature:
    """Full per-image encoding across the channels present in codebooks."""
    from . import features
    from .pyramid import build_pyramid

    px = img.pixels if hasattr(img, "pixels") else np.asarray(img)
    h, w = px.shape[:2]
    if pyr is None:
        pyr = build_pyramid(h, w)
    cys = features.grid_center_ys(h, w)
    memberships = part_memberships(cys, pyr)
    vectors, raws = {}, {}
    for ch, cb in codebooks.items():
        ch = Channel(ch)
        if ch == Channel.WHSV:
            desc = features.whsv_descriptors(px, weight_map)
        elif ch == Channel.LAB:
            desc = features.lab_descriptors(px)
        else:
            desc = features.sift_descriptors(px)
        vec, raw = encode_channel_from_descriptors(
            desc, cys, cb, pyr, params, memberships=memberships
        )
        vectors[ch] = vec
        raws[ch] = raw
    return Signature(
        vectors=vectors,
        raw=raws,
        person_id=getattr(img, "person_id", None),
        camera_id=getattr(img, "camera_id", None),
        orientation=getattr(img, "orientation", None),
    )

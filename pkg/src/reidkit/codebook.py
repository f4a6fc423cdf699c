"""Per-part visual codebooks learned with seeded k-means.

Each channel gets one sub-codebook per pyramid part (8 of them), learned
independently on descriptors sampled from patches whose center falls in
that part. Entries are stored row-wise: an (M, D) array per part.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import (
    Channel,
    InsufficientDescriptorsError,
    TooFewPointsError,
    rng_from,
)
from .pyramid import N_PARTS, BodyStructurePyramid, PART_NAMES, assign_center_y

DEFAULT_CODEBOOK_SIZE = 1024
DEFAULT_SAMPLE_COUNT = 5000


@dataclass(frozen=True)
class SubCodebook:
    """Codebook of one pyramid part: entries are rows of an (M, D) array."""

    part_index: int
    channel: Channel
    entries: np.ndarray

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class BodyStructureCodebook:
    """All 8 per-part sub-codebooks of one channel, in canonical part order."""

    channel: Channel
    sub_codebooks: tuple[SubCodebook, ...]

    def __post_init__(self):
        if len(self.sub_codebooks) != N_PARTS:
            raise ValueError(f"expected {N_PARTS} sub-codebooks, got {len(self.sub_codebooks)}")

    @property
    def m(self) -> int:
        return self.sub_codebooks[0].m

    @property
    def d(self) -> int:
        return self.sub_codebooks[0].d


@dataclass(frozen=True)
class KmeansResult:
    centers: np.ndarray
    inertia_history: tuple[float, ...]
    n_iter: int


def _kmeans_pp_init(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((m, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = cdist(points, centers[0:1], "sqeuclidean")[:, 0]
    for j in range(1, m):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = int(rng.choice(n, p=probs))
        else:
            # all remaining mass at distance zero (duplicate points)
            idx = int(rng.integers(n))
        centers[j] = points[idx]
        d2 = np.minimum(d2, cdist(points, centers[j : j + 1], "sqeuclidean")[:, 0])
    return centers


def kmeans(points: np.ndarray, m: int, seed, max_iter: int = 100, tol: float = 1e-4) -> KmeansResult:
    """Lloyd iterations from a k-means++ start, fully determined by the seed.

    Empty clusters are re-seeded to the point currently farthest from its
    assigned center. Distortion is recorded at every assignment step.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise TooFewPointsError(f"points must be 2-D, got shape {points.shape}")
    n = points.shape[0]
    m = int(m)
    if m < 1 or n < m:
        raise TooFewPointsError(f"need at least m={m} points, got {n}")
    rng = rng_from(seed)
    centers = _kmeans_pp_init(points, m, rng)
    history = []
    n_iter = 0
    for it in range(max_iter):
        d2 = cdist(points, centers, "sqeuclidean")
        assign = d2.argmin(axis=1)
        best = d2[np.arange(n), assign]
        history.append(float(best.sum()))
        counts = np.bincount(assign, minlength=m)
        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, assign, points)
        nonempty = counts > 0
        new_centers[nonempty] /= counts[nonempty, None]
        if not nonempty.all():
            taken = best.copy()
            for j in np.flatnonzero(~nonempty):
                far = int(taken.argmax())
                new_centers[j] = points[far]
                taken[far] = 0.0
        shift = np.linalg.norm(new_centers - centers, axis=1).max()
        centers = new_centers
        n_iter = it + 1
        if shift < tol:
            break
    return KmeansResult(centers=centers, inertia_history=tuple(history), n_iter=n_iter)


def collect_part_pools(
    descriptor_arrays: list[np.ndarray],
    center_y_arrays: list[np.ndarray],
    pyr: BodyStructurePyramid,
) -> list[np.ndarray]:
    """Stack descriptors into the 8 per-part pools.

    Every patch contributes to one part per pyramid level, so a row lands
    in up to 3 pools (2 for head patches, whose level-2 and level-3 part
    coincide).
    """
    assign_cache: dict[int, tuple[int, int, int]] = {}
    pools: list[list[np.ndarray]] = [[] for _ in range(N_PARTS)]
    for desc, cys in zip(descriptor_arrays, center_y_arrays):
        cys = np.asarray(cys)
        part_rows: dict[int, list[int]] = {}
        for i, y in enumerate(cys):
            y = int(y)
            if y not in assign_cache:
                assign_cache[y] = assign_center_y(pyr, y)
            for a in set(assign_cache[y]):
                part_rows.setdefault(a, []).append(i)
        for a, rows in part_rows.items():
            pools[a].append(desc[rows])
    return [
        np.concatenate(chunks, axis=0) if chunks else np.empty((0, 0))
        for chunks in pools
    ]


def learn_codebook_from_pools(
    pools: list[np.ndarray],
    channel: Channel,
    seed: int,
    sample_count: int = DEFAULT_SAMPLE_COUNT,
    m: int = DEFAULT_CODEBOOK_SIZE,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> BodyStructureCodebook:
    """k-means per part on a seeded descriptor sample.

    Samples without replacement when the pool is large enough, with
    replacement otherwise. An empty pool is a hard error.
    """
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(int(seed))
    children = ss.spawn(N_PARTS)
    subs = []
    for a in range(N_PARTS):
        pool = pools[a]
        if pool.size == 0:
            raise InsufficientDescriptorsError(
                f"part '{PART_NAMES[a]}' of channel {channel.value} has no descriptors"
            )
        rng = np.random.default_rng(children[a])
        n = pool.shape[0]
        idx = rng.choice(n, size=sample_count, replace=n < sample_count)
        sample = pool[idx]
        result = kmeans(sample, m, rng, max_iter=max_iter, tol=tol)
        subs.append(SubCodebook(part_index=a, channel=channel, entries=result.centers))
    return BodyStructureCodebook(channel=channel, sub_codebooks=tuple(subs))


def learn_codebook(
    train_images,
    channel: Channel,
    seed: int,
    sample_count: int = DEFAULT_SAMPLE_COUNT,
    m: int = DEFAULT_CODEBOOK_SIZE,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> BodyStructureCodebook:
    """Learn a channel codebook directly from images (extracts descriptors)."""
    from . import features
    from .pyramid import build_pyramid

    descs, cys_list = [], []
    pyr = None
    wm = None
    for img in train_images:
        h, w = img.pixels.shape[:2]
        if pyr is None:
            pyr = build_pyramid(h, w)
            wm = features.build_weight_map(h, w)
        elif (pyr.height, pyr.width) != (h, w):
            raise InsufficientDescriptorsError(
                "codebook training requires images of one common size; resize first"
            )
        if channel == Channel.WHSV:
            descs.append(features.whsv_descriptors(img, wm))
        elif channel == Channel.LAB:
            descs.append(features.lab_descriptors(img))
        else:
            descs.append(features.sift_descriptors(img))
        cys_list.append(features.grid_center_ys(h, w))
    if not descs:
        raise InsufficientDescriptorsError("no training images")
    pools = collect_part_pools(descs, cys_list, pyr)
    return learn_codebook_from_pools(
        pools, channel, seed, sample_count=sample_count, m=m, max_iter=max_iter, tol=tol
    )

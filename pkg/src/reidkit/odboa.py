"""Orientation-driven multi-shot matching.

Shots of one person under one camera are grouped into an appearance bag
with one slot per orientation (multi-frame slots are max-pooled and
re-normalized). Matching two bags first selects orientation pairs: same
slot when the gallery has it, else an adjacent slot (+1 preferred), and
only when no probe slot finds a partner does a seeded random fallback
sample Q = min(occupied, occupied) slots per side.

Eight match methods are supported; the pooling ones fuse the selected
slots into a single vector per side (at the raw-code level for the low
variants, at the normalized-signature level for the mid variants), the
averaging ones aggregate single-shot distances over all slot pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    Channel,
    DataError,
    EmptyBagError,
    MixedIdentityError,
    orientation_distance,
    orientation_mod,
    rng_from,
)
from .encoding import Signature
from .metric import (
    FusionWeights,
    KernelPcaModel,
    MetricModel,
    fuse_distances,
    kpca_project,
    mahalanobis_rows,
)

WAVG_WEIGHTS = (1.0, 0.9, 0.4)  # same / adjacent / other orientation


class MatchMethod(str, Enum):
    LOW_POOLING = "low-pooling"
    ODBOA_LOW_POOLING = "odboa-low-pooling"
    MID_POOLING = "mid-pooling"
    ODBOA_MID_POOLING = "odboa-mid-pooling"
    AVG = "avg"
    ODBOA_WAVG = "odboa-wavg"
    DUAL_AVG = "dual-avg"
    DUAL_WAVG = "dual-wavg"


POOLING_METHODS = {
    MatchMethod.LOW_POOLING,
    MatchMethod.ODBOA_LOW_POOLING,
    MatchMethod.MID_POOLING,
    MatchMethod.ODBOA_MID_POOLING,
}
SELECTING_METHODS = {MatchMethod.ODBOA_LOW_POOLING, MatchMethod.ODBOA_MID_POOLING}
DUAL_METHODS = {MatchMethod.DUAL_AVG, MatchMethod.DUAL_WAVG}
WEIGHTED_METHODS = {MatchMethod.ODBOA_WAVG, MatchMethod.DUAL_WAVG}


@dataclass
class BagSlot:
    """Pooled signature of all frames sharing one orientation."""

    vectors: dict  # channel -> L2-normalized pooled vector
    raw: dict  # channel -> un-normalized pooled code vector
    frames: int


@dataclass
class AppearanceBag:
    person_id: object
    camera_id: int | None
    slots: dict  # orientation label -> BagSlot

    def occupied(self) -> list[int]:
        return sorted(self.slots)

    def num(self) -> int:
        return len(self.slots)


def pool_vectors(vectors) -> np.ndarray:
    """Coordinate-wise max over vectors, re-normalized to unit length."""
    vecs = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vecs:
        raise EmptyBagError("nothing to pool")
    out = np.maximum.reduce(vecs)
    norm = np.linalg.norm(out)
    return out / norm if norm > 0 else out


def build_bag(signatures) -> AppearanceBag:
    """Group one person+camera's signatures into orientation slots."""
    sigs = list(signatures)
    if not sigs:
        raise EmptyBagError("cannot build a bag from zero signatures")
    pid = sigs[0].person_id
    cam = sigs[0].camera_id
    for s in sigs:
        if s.person_id != pid or s.camera_id != cam:
            raise MixedIdentityError(
                f"bag mixes ({pid!r}, cam {cam}) with ({s.person_id!r}, cam {s.camera_id})"
            )
        if s.orientation is None:
            raise DataError("bag signatures need orientation labels (predict first)")
    slots = {}
    by_orient: dict[int, list[Signature]] = {}
    for s in sigs:
        by_orient.setdefault(int(s.orientation), []).append(s)
    for orient, group in sorted(by_orient.items()):
        channels = group[0].vectors.keys()
        vectors = {ch: pool_vectors([g.vectors[ch] for g in group]) for ch in channels}
        raw = {
            ch: np.maximum.reduce([np.asarray(g.raw[ch], dtype=np.float64) for g in group])
            for ch in channels
        }
        slots[orient] = BagSlot(vectors=vectors, raw=raw, frames=len(group))
    return AppearanceBag(person_id=pid, camera_id=cam, slots=slots)


def adjacent_lookup(occupied, i: int):
    """Occupied neighbor of label i, trying +1 before -1; None when absent."""
    occ = set(occupied)
    for step in (1, -1):
        j = orientation_mod(i, step)
        if j in occ:
            return j
    return None


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of orientation pair selection.

    pairs is empty exactly when fallback is True; probe_slots/gallery_slots
    always hold the slots each side will pool (unique, ascending).
    """

    pairs: tuple
    fallback: bool
    probe_slots: tuple
    gallery_slots: tuple


def select_slot_pairs(probe_occupied, gallery_occupied, rng) -> SelectionResult:
    """Pair selection on occupancy sets (the bags' vectors are irrelevant)."""
    probe_occ = sorted(int(i) for i in probe_occupied)
    gallery_occ = set(int(i) for i in gallery_occupied)
    if not probe_occ or not gallery_occ:
        raise EmptyBagError("selection needs non-empty bags on both sides")
    pairs = []
    for i in probe_occ:
        if i in gallery_occ:
            pairs.append((i, i))
            continue
        j = adjacent_lookup(gallery_occ, i)
        if j is not None:
            pairs.append((i, j))
    if pairs:
        return SelectionResult(
            pairs=tuple(pairs),
            fallback=False,
            probe_slots=tuple(sorted({p for p, _ in pairs})),
            gallery_slots=tuple(sorted({g for _, g in pairs})),
        )
    q = min(len(probe_occ), len(gallery_occ))
    rng = rng_from(rng)
    ps = sorted(int(v) for v in rng.choice(probe_occ, size=q, replace=False))
    gs = sorted(int(v) for v in rng.choice(sorted(gallery_occ), size=q, replace=False))
    return SelectionResult(
        pairs=(), fallback=True, probe_slots=tuple(ps), gallery_slots=tuple(gs)
    )


def select_pairs(probe: AppearanceBag, gallery: AppearanceBag, seed=0) -> SelectionResult:
    return select_slot_pairs(probe.occupied(), gallery.occupied(), rng_from(seed))


def _pooled(bag: AppearanceBag, ch: Channel, slots, low: bool) -> np.ndarray:
    if low:
        return pool_vectors([bag.slots[s].raw[ch] for s in slots])
    return pool_vectors([bag.slots[s].vectors[ch] for s in slots])


def _maha_matrix(M: MetricModel, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    mat = M.matrix
    qa = np.einsum("nd,de,ne->n", A, mat, A)
    qb = np.einsum("nd,de,ne->n", B, mat, B)
    cross = A @ mat @ B.T
    return np.clip(qa[:, None] + qb[None, :] - 2.0 * cross, 0.0, None)


@dataclass
class PooledContext:
    """Projected pooled vectors for one probe/gallery bag list and method."""

    per_pair: bool
    shape: tuple
    probe_proj: dict  # channel -> (P, d) or (P*G, d)
    gallery_proj: dict
    selections: list | None  # row-major SelectionResults when per_pair


def build_pooled_context(probes, galleries, pcas: dict, method: MatchMethod, seed=0) -> PooledContext:
    low = method in (MatchMethod.LOW_POOLING, MatchMethod.ODBOA_LOW_POOLING)
    per_pair = method in SELECTING_METHODS
    channels = list(pcas)
    P, G = len(probes), len(galleries)
    if not per_pair:
        probe_proj = {}
        gallery_proj = {}
        for ch in channels:
            pv = np.stack([_pooled(b, ch, b.occupied(), low) for b in probes])
            gv = np.stack([_pooled(b, ch, b.occupied(), low) for b in galleries])
            probe_proj[ch] = kpca_project(pcas[ch], pv)
            gallery_proj[ch] = kpca_project(pcas[ch], gv)
        return PooledContext(False, (P, G), probe_proj, gallery_proj, None)

    rng = rng_from(seed)
    selections = []
    probe_keys, gallery_keys = [], []
    for p in probes:
        for g in galleries:
            sel = select_slot_pairs(p.occupied(), g.occupied(), rng)
            selections.append(sel)
            probe_keys.append(sel.probe_slots)
            gallery_keys.append(sel.gallery_slots)
    probe_proj = {}
    gallery_proj = {}
    for ch in channels:
        # pooled vectors repeat across pairs; project each unique one once
        def side(bags, axis_keys, take_probe):
            uniq: dict[tuple, int] = {}
            vecs = []
            rows = np.empty(P * G, dtype=np.int64)
            for idx in range(P * G):
                bag = bags[idx // G] if take_probe else bags[idx % G]
                key = ((idx // G) if take_probe else (idx % G), axis_keys[idx])
                if key not in uniq:
                    uniq[key] = len(vecs)
                    vecs.append(_pooled(bag, ch, key[1], low))
                rows[idx] = uniq[key]
            proj = kpca_project(pcas[ch], np.stack(vecs))
            return proj[rows]

        probe_proj[ch] = side(probes, probe_keys, True)
        gallery_proj[ch] = side(galleries, gallery_keys, False)
    return PooledContext(True, (P, G), probe_proj, gallery_proj, selections)


def pooled_distances(ctx: PooledContext, metrics: dict) -> dict:
    """channel -> (P, G) raw squared distances for a pooled-method context."""
    out = {}
    P, G = ctx.shape
    for ch, M in metrics.items():
        if ctx.per_pair:
            vals = mahalanobis_rows(M, ctx.probe_proj[ch], ctx.gallery_proj[ch])
            out[ch] = vals.reshape(P, G)
        else:
            out[ch] = _maha_matrix(M, ctx.probe_proj[ch], ctx.gallery_proj[ch])
    return out


@dataclass
class SlotContext:
    """Projected per-slot vectors plus bag bookkeeping for averaging methods."""

    shape: tuple
    probe_proj: dict  # channel -> (total probe slots, d)
    gallery_proj: dict
    probe_ranges: list  # (start, end) per probe bag
    gallery_ranges: list
    orient_dist: np.ndarray  # (total probe slots, total gallery slots)


def build_slot_context(probes, galleries, pcas: dict) -> SlotContext:
    channels = list(pcas)

    def ranges(bags):
        spans = []
        start = 0
        orients = []
        for b in bags:
            occ = b.occupied()
            spans.append((start, start + len(occ)))
            orients.extend(occ)
            start += len(occ)
        return spans, np.array(orients, dtype=np.int64)

    probe_ranges, po = ranges(probes)
    gallery_ranges, go = ranges(galleries)
    d = np.abs(po[:, None] - go[None, :])
    od = np.minimum(d, 8 - d)
    probe_proj = {}
    gallery_proj = {}
    for ch in channels:
        pv = np.concatenate([[b.slots[s].vectors[ch] for s in b.occupied()] for b in probes])
        gv = np.concatenate([[b.slots[s].vectors[ch] for s in b.occupied()] for b in galleries])
        probe_proj[ch] = kpca_project(pcas[ch], pv)
        gallery_proj[ch] = kpca_project(pcas[ch], gv)
    return SlotContext(
        (len(probes), len(galleries)), probe_proj, gallery_proj,
        probe_ranges, gallery_ranges, od,
    )


def slot_distances(
    ctx: SlotContext,
    method: MatchMethod,
    metrics: dict | None = None,
    similar_metrics: dict | None = None,
    dissimilar_metrics: dict | None = None,
    wavg_weights=WAVG_WEIGHTS,
) -> dict:
    """channel -> (P, G) aggregated slot-pair distances for averaging methods."""
    P, G = ctx.shape
    weighted = method in WEIGHTED_METHODS
    dual = method in DUAL_METHODS
    channels = list(ctx.probe_proj)
    wmap = np.array(
        [wavg_weights[0], wavg_weights[1], wavg_weights[2], wavg_weights[2], wavg_weights[2]]
    )
    out = {}
    for ch in channels:
        A = ctx.probe_proj[ch]
        B = ctx.gallery_proj[ch]
        if dual:
            if similar_metrics is None or dissimilar_metrics is None:
                raise DataError(f"method {method.value} needs similar and dissimilar metrics")
            d_sim = _maha_matrix(similar_metrics[ch], A, B)
            d_dis = _maha_matrix(dissimilar_metrics[ch], A, B)
            dslot = np.where(ctx.orient_dist <= 1, d_sim, d_dis)
        else:
            if metrics is None:
                raise DataError(f"method {method.value} needs a metric per channel")
            dslot = _maha_matrix(metrics[ch], A, B)
        W = wmap[ctx.orient_dist] if weighted else np.ones_like(dslot)
        D = np.empty((P, G))
        for pi, (ra, rb) in enumerate(ctx.probe_ranges):
            for gi, (ca, cb) in enumerate(ctx.gallery_ranges):
                w = W[ra:rb, ca:cb]
                D[pi, gi] = float((dslot[ra:rb, ca:cb] * w).sum() / w.sum())
        out[ch] = D
    return out


def distance_matrices(
    probes,
    galleries,
    pcas: dict,
    method: MatchMethod,
    metrics: dict | None = None,
    similar_metrics: dict | None = None,
    dissimilar_metrics: dict | None = None,
    seed=0,
    wavg_weights=WAVG_WEIGHTS,
) -> tuple[dict, list | None]:
    """Per-channel raw (P, G) distance matrices for any method.

    Returns (matrices, selections); selections is the row-major list of
    SelectionResults for the selecting methods, else None.
    """
    method = MatchMethod(method)
    if method in POOLING_METHODS:
        ctx = build_pooled_context(probes, galleries, pcas, method, seed)
        if metrics is None:
            raise DataError(f"method {method.value} needs a metric per channel")
        return pooled_distances(ctx, metrics), ctx.selections
    ctx = build_slot_context(probes, galleries, pcas)
    mats = slot_distances(
        ctx, method, metrics=metrics,
        similar_metrics=similar_metrics, dissimilar_metrics=dissimilar_metrics,
        wavg_weights=wavg_weights,
    )
    return mats, None


@dataclass
class MatchResult:
    score: float
    per_channel: dict
    selection: SelectionResult | None


def match_bags(
    probe: AppearanceBag,
    gallery: AppearanceBag,
    pcas: dict,
    method: MatchMethod = MatchMethod.ODBOA_MID_POOLING,
    metrics: dict | None = None,
    similar_metrics: dict | None = None,
    dissimilar_metrics: dict | None = None,
    betas: FusionWeights = FusionWeights(),
    seed=0,
    wavg_weights=WAVG_WEIGHTS,
) -> MatchResult:
    """Similarity of one probe bag against one gallery bag.

    S is the negated fusion of the per-channel distances. With a single
    gallery there is no row to min-max normalize over, so the raw distances
    are fused directly.
    """
    mats, selections = distance_matrices(
        [probe], [gallery], pcas, method,
        metrics=metrics, similar_metrics=similar_metrics,
        dissimilar_metrics=dissimilar_metrics, seed=seed, wavg_weights=wavg_weights,
    )
    per_channel = {ch: float(m[0, 0]) for ch, m in mats.items()}
    fused = float(fuse_distances(per_channel, betas))
    selection = selections[0] if selections else None
    if selection is None and MatchMethod(method) in SELECTING_METHODS:
        selection = select_pairs(probe, gallery, seed)
    return MatchResult(score=-fused, per_channel=per_channel, selection=selection)

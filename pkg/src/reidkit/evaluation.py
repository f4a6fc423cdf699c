"""Datasets, synthetic imagery, CMC scoring, and the experiment driver.

The manifest format is a four-column CSV with the exact header
``image_path,person_id,camera_id,orientation`` where orientation 0 means
unknown. The experiment driver runs repeated identity-split trials, fits
every model on the training half only, and reports averaged CMC curves.
All randomness flows from one master seed, so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .codebook import collect_part_pools, learn_codebook_from_pools
from .core import (
    CHANNELS,
    Channel,
    DataError,
    GalleryMismatchError,
    ManifestError,
    PersonImage,
    child_seed,
)
from .encoding import (
    LlcParams,
    Signature,
    encode_channel_from_descriptors,
    part_memberships,
)
from .features import (
    build_weight_map,
    grid_center_ys,
    lab_descriptors,
    resize_bilinear,
    sift_descriptors,
    whsv_descriptors,
)
from .metric import (
    FusionWeights,
    fit_kernel_pca,
    fit_kissme,
    fuse_distances,
    generate_pairs,
    kpca_project,
    normalize_distances,
)
from .odboa import (
    DUAL_METHODS,
    POOLING_METHODS,
    WAVG_WEIGHTS,
    MatchMethod,
    build_bag,
    build_pooled_context,
    build_slot_context,
    pooled_distances,
    slot_distances,
)
from .orientation import predict_orientation, train_orientation
from .pyramid import build_pyramid

MANIFEST_COLUMNS = ("image_path", "person_id", "camera_id", "orientation")


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    person_id: str
    camera_id: int
    orientation: int | None


def load_manifest(path) -> list[ManifestRow]:
    """Parse and validate a dataset manifest CSV."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError(f"manifest {path} is empty") from None
    if [c.strip() for c in header] != list(MANIFEST_COLUMNS):
        raise ManifestError(
            f"manifest header must be {','.join(MANIFEST_COLUMNS)!r}, got {','.join(header)!r}"
        )
    rows = []
    seen = set()
    duplicates = 0
    for ln, rec in enumerate(reader, start=2):
        if not rec or (len(rec) == 1 and not rec[0].strip()):
            continue
        if len(rec) != 4:
            raise ManifestError(f"line {ln}: expected 4 fields, got {len(rec)}")
        img_path, person, cam_s, orient_s = (v.strip() for v in rec)
        if not img_path or not person:
            raise ManifestError(f"line {ln}: empty image_path or person_id")
        try:
            cam = int(cam_s)
            orient = int(orient_s)
        except ValueError:
            raise ManifestError(f"line {ln}: camera_id and orientation must be integers") from None
        if not 0 <= orient <= 8:
            raise ManifestError(f"line {ln}: orientation must be 0 (unknown) or 1..8, got {orient}")
        if img_path in seen:
            duplicates += 1
            continue
        seen.add(img_path)
        rows.append(
            ManifestRow(img_path, person, cam, orient if orient else None)
        )
    if duplicates:
        warnings.warn(f"manifest {path}: dropped {duplicates} duplicate image path(s)")
    if not rows:
        raise ManifestError(f"manifest {path} has no data rows")
    return rows


def load_dataset(manifest_path, image_root=None, size: tuple[int, int] = (128, 48)) -> list[PersonImage]:
    """Load, resize, and wrap every image a manifest points at.

    Relative image paths resolve against image_root (default: the
    manifest's directory). Missing files are skipped with a warning.
    """
    manifest_path = Path(manifest_path)
    rows = load_manifest(manifest_path)
    root = Path(image_root) if image_root is not None else manifest_path.parent
    h, w = size
    images = []
    missing = 0
    for r in rows:
        p = Path(r.image_path)
        if not p.is_absolute():
            p = root / p
        if not p.is_file():
            missing += 1
            continue
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float64)
        if arr.shape[:2] != (h, w):
            arr = resize_bilinear(arr, h, w)
        px = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
        images.append(PersonImage(px, r.person_id, r.camera_id, r.orientation))
    if missing:
        warnings.warn(f"{missing} manifest image(s) not found on disk; skipped")
    if not images:
        raise ManifestError(f"no usable images behind manifest {manifest_path}")
    return images


def synth_generate(
    seed: int = 0,
    n_persons: int = 60,
    cameras: int = 2,
    orientations_per_camera: int = 8,
    height: int = 128,
    width: int = 48,
    noise_sigma: float = 8.0,
) -> list[PersonImage]:
    """Toy pedestrian images with orientation-dependent appearance.

    Each person gets a head color plus front/back colors for torso and
    legs; the rendered color blends front and back by the cosine of the
    viewing angle (label 7 faces the camera). Each camera adds its own
    illumination shift, then Gaussian pixel noise.
    """
    if not 1 <= orientations_per_camera <= 8:
        raise DataError("orientations_per_camera must be in 1..8")
    pyr = build_pyramid(height, width)
    head, torso, legs = pyr.level_regions(2)
    palette_rng = np.random.default_rng(child_seed(seed, 0))
    palettes = []
    for _ in range(n_persons):
        palettes.append(
            {
                "head": palette_rng.uniform(90, 210, 3),
                "torso": palette_rng.uniform(0, 255, (2, 3)),
                "legs": palette_rng.uniform(0, 255, (2, 3)),
            }
        )
    camera_rng = np.random.default_rng(child_seed(seed, 1))
    shifts = camera_rng.uniform(-20.0, 20.0, size=(cameras, 3))
    noise_rng = np.random.default_rng(child_seed(seed, 2))
    x0 = int(round(0.2 * width))
    x1 = int(round(0.8 * width))
    images = []
    for pid in range(n_persons):
        pal = palettes[pid]
        for cam in range(cameras):
            for label in range(1, orientations_per_camera + 1):
                angle = (label - 1) * 45.0
                mix = 0.5 * (1.0 + np.cos(np.radians(angle - 270.0)))
                canvas = np.full((height, width, 3), 200.0)
                canvas[head.y0 : head.y1, x0:x1] = pal["head"]
                canvas[torso.y0 : torso.y1, x0:x1] = mix * pal["torso"][0] + (1 - mix) * pal["torso"][1]
                canvas[legs.y0 : legs.y1, x0:x1] = mix * pal["legs"][0] + (1 - mix) * pal["legs"][1]
                canvas += shifts[cam]
                canvas += noise_rng.normal(0.0, noise_sigma, canvas.shape)
                px = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
                images.append(
                    PersonImage(px, person_id=f"p{pid:03d}", camera_id=cam, orientation=label)
                )
    return images


def write_dataset(images, out_dir) -> Path:
    """Save images as PNGs plus a manifest.csv; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, img in enumerate(images):
        name = f"img{idx:05d}_{img.person_id}_c{img.camera_id}_o{img.orientation or 0}.png"
        Image.fromarray(img.pixels).save(out / name)
        rows.append((name, str(img.person_id), img.camera_id, img.orientation or 0))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)
    return manifest


@dataclass(frozen=True)
class CmcCurve:
    """Cumulative match characteristic over gallery ranks."""

    rates: np.ndarray

    @property
    def rank1(self) -> float:
        return float(self.rates[0])


def cmc(dist: np.ndarray, probe_ids, gallery_ids) -> CmcCurve:
    """CMC of a (P, G) distance matrix; ties rank by gallery position."""
    dist = np.asarray(dist, dtype=np.float64)
    probe_ids = list(probe_ids)
    gallery_ids = list(gallery_ids)
    if dist.shape != (len(probe_ids), len(gallery_ids)):
        raise GalleryMismatchError(
            f"distance matrix {dist.shape} does not match {len(probe_ids)} probes "
            f"x {len(gallery_ids)} gallery entries"
        )
    if len(set(gallery_ids)) != len(gallery_ids):
        raise GalleryMismatchError("gallery must hold one entry per identity")
    col_of = {g: j for j, g in enumerate(gallery_ids)}
    g = len(gallery_ids)
    positions = np.empty(len(probe_ids), dtype=np.int64)
    for i, pid in enumerate(probe_ids):
        if pid not in col_of:
            raise GalleryMismatchError(f"probe identity {pid!r} is missing from the gallery")
        order = np.argsort(dist[i], kind="stable")
        positions[i] = int(np.flatnonzero(order == col_of[pid])[0])
    hits = np.bincount(positions, minlength=g)
    rates = np.cumsum(hits) / len(probe_ids)
    return CmcCurve(rates=rates)


@dataclass
class ExperimentConfig:
    methods: tuple = (MatchMethod.ODBOA_MID_POOLING,)
    settings: tuple = ((1, 1),)  # (probe shots, gallery shots)
    pos_policies: tuple = ("similar",)
    neg_policy: str = "all"
    trials: int = 10
    seed: int = 0
    probe_camera: int = 0
    gallery_camera: int = 1
    codebook_size: int = 1024
    codebook_samples: int = 5000
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-4
    llc_k: int = 5
    llc_lambda: float = 1e-4
    pca_dim: int = 80
    pca_bandwidth: float = 0.8
    max_pairs: int | None = None
    betas: FusionWeights = field(default_factory=FusionWeights)
    wavg_weights: tuple = WAVG_WEIGHTS
    weight_sigma_frac: float = 0.25
    fit_orientation: str = "auto"  # auto | always | never
    smoothing_kernel: tuple = (0.25, 0.5, 0.25)
    svm_epochs: int = 50
    svm_reg: float = 1e-4


def config_fingerprint(cfg: ExperimentConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentResult:
    """Averaged curves keyed by (probe shots, gallery shots, method, policy)."""

    curves: dict
    rank1: dict  # same keys -> per-trial rank-1 rates
    metadata: dict
    gallery_size: int

    def mean_rank1(self, m: int, n: int, method, policy: str) -> float:
        key = (m, n, MatchMethod(method).value, policy)
        return float(np.mean(self.rank1[key]))


def _sample_shots(pool: list, k: int, rng) -> list:
    replace = len(pool) < k
    idx = rng.choice(len(pool), size=k, replace=replace)
    return [pool[i] for i in sorted(int(v) for v in idx)]


def run_experiment(cfg: ExperimentConfig, images) -> ExperimentResult:
    """Repeated-trial evaluation of the configured methods on one dataset."""
    images = list(images)
    if not images:
        raise DataError("experiment needs images")
    h, w = images[0].height, images[0].width
    for img in images:
        if (img.height, img.width) != (h, w):
            raise DataError("experiment images must share one size; resize while loading")
    methods = [MatchMethod(m) for m in cfg.methods]
    dual_needed = any(m in DUAL_METHODS for m in methods)
    policies_needed = sorted(
        set(cfg.pos_policies) | ({"similar", "dissimilar"} if dual_needed else set())
    )
    pyr = build_pyramid(h, w)
    wmap = build_weight_map(h, w, cfg.weight_sigma_frac)
    cys = grid_center_ys(h, w)
    memberships = part_memberships(cys, pyr)
    params = LlcParams(lam=cfg.llc_lambda, k=cfg.llc_k)
    n_img = len(images)

    desc_cache = {Channel.WHSV: [], Channel.LAB: [], Channel.SIFT: []}
    for img in images:
        desc_cache[Channel.WHSV].append(whsv_descriptors(img.pixels, wmap).astype(np.float32))
        desc_cache[Channel.LAB].append(lab_descriptors(img.pixels).astype(np.float32))
        desc_cache[Channel.SIFT].append(sift_descriptors(img.pixels).astype(np.float32))

    ids = sorted({img.person_id for img in images})
    if len(ids) < 4:
        raise DataError(f"need at least 4 identities, got {len(ids)}")
    curves_acc: dict = {}
    rank1_acc: dict = {}
    gallery_size = None

    for t in range(cfg.trials):
        split_rng = np.random.default_rng(child_seed(cfg.seed, t, 0))
        perm = split_rng.permutation(len(ids))
        train_ids = {ids[i] for i in perm[: len(ids) // 2]}
        train_idx = [i for i, img in enumerate(images) if img.person_id in train_ids]
        test_idx = [i for i, img in enumerate(images) if img.person_id not in train_ids]

        codebooks = {}
        for ci, ch in enumerate(CHANNELS):
            pools = collect_part_pools(
                [desc_cache[ch][i] for i in train_idx], [cys] * len(train_idx), pyr
            )
            codebooks[ch] = learn_codebook_from_pools(
                pools,
                ch,
                child_seed(cfg.seed, t, 1, ci),
                sample_count=cfg.codebook_samples,
                m=cfg.codebook_size,
                max_iter=cfg.kmeans_max_iter,
                tol=cfg.kmeans_tol,
            )

        dim = 8 * cfg.codebook_size
        vecs = {ch: np.empty((n_img, dim)) for ch in CHANNELS}
        raws = {ch: np.empty((n_img, dim)) for ch in CHANNELS}
        for ch in CHANNELS:
            for i in range(n_img):
                vec, raw = encode_channel_from_descriptors(
                    desc_cache[ch][i], cys, codebooks[ch], pyr, params, memberships=memberships
                )
                vecs[ch][i] = vec
                raws[ch][i] = raw

        pcas = {
            ch: fit_kernel_pca(vecs[ch][train_idx], cfg.pca_dim, cfg.pca_bandwidth)
            for ch in CHANNELS
        }
        proj_train = {ch: kpca_project(pcas[ch], vecs[ch][train_idx]) for ch in CHANNELS}

        train_records = [
            (images[i].person_id, images[i].camera_id, images[i].orientation)
            for i in train_idx
        ]
        metrics = {}
        for pi, pol in enumerate(policies_needed):
            pos, neg = generate_pairs(
                train_records,
                pos_policy=pol,
                neg_policy=cfg.neg_policy,
                max_pairs=cfg.max_pairs,
                seed=child_seed(cfg.seed, t, 2, pi),
            )
            metrics[pol] = {
                ch: fit_kissme(proj_train[ch][pos], proj_train[ch][neg]) for ch in CHANNELS
            }

        unknown_test = [i for i in test_idx if images[i].orientation is None]
        clf = None
        if cfg.fit_orientation == "always" or (cfg.fit_orientation == "auto" and unknown_test):
            clf = train_orientation(
                [images[i] for i in train_idx],
                child_seed(cfg.seed, t, 5),
                epochs=cfg.svm_epochs,
                reg=cfg.svm_reg,
                resize=(h, w),
            )
        elif unknown_test:
            raise DataError(
                f"{len(unknown_test)} test image(s) lack orientation labels and "
                "orientation fitting is disabled"
            )
        resolved = {}
        for i in test_idx:
            if images[i].orientation is not None:
                resolved[i] = images[i].orientation
            else:
                resolved[i] = predict_orientation(clf, images[i], kernel=cfg.smoothing_kernel)

        test_ids = sorted({images[i].person_id for i in test_idx})
        probe_pool = {pid: [] for pid in test_ids}
        gallery_pool = {pid: [] for pid in test_ids}
        for i in test_idx:
            if images[i].camera_id == cfg.probe_camera:
                probe_pool[images[i].person_id].append(i)
            elif images[i].camera_id == cfg.gallery_camera:
                gallery_pool[images[i].person_id].append(i)
        short = [pid for pid in test_ids if not probe_pool[pid] or not gallery_pool[pid]]
        if short:
            raise DataError(
                f"{len(short)} test identities lack shots under camera "
                f"{cfg.probe_camera} or {cfg.gallery_camera}"
            )
        gallery_size = len(test_ids)

        sig_cache: dict[int, Signature] = {}

        def signature_for(i: int) -> Signature:
            if i not in sig_cache:
                img = images[i]
                sig_cache[i] = Signature(
                    vectors={ch: vecs[ch][i] for ch in CHANNELS},
                    raw={ch: raws[ch][i] for ch in CHANNELS},
                    person_id=img.person_id,
                    camera_id=img.camera_id,
                    orientation=resolved[i],
                )
            return sig_cache[i]

        for si, (m_shots, n_shots) in enumerate(cfg.settings):
            sample_rng = np.random.default_rng(child_seed(cfg.seed, t, 3, si))
            probe_bags, gallery_bags = [], []
            for pid in test_ids:
                p_take = _sample_shots(probe_pool[pid], m_shots, sample_rng)
                g_take = _sample_shots(gallery_pool[pid], n_shots, sample_rng)
                probe_bags.append(build_bag([signature_for(i) for i in p_take]))
                gallery_bags.append(build_bag([signature_for(i) for i in g_take]))

            pooled_ctx = {}
            slot_ctx = None
            for mi, method in enumerate(methods):
                if method in POOLING_METHODS:
                    pooled_ctx[method] = build_pooled_context(
                        probe_bags, gallery_bags, pcas, method,
                        seed=child_seed(cfg.seed, t, 4, si, mi),
                    )
                elif slot_ctx is None:
                    slot_ctx = build_slot_context(probe_bags, gallery_bags, pcas)

            for pol in cfg.pos_policies:
                for method in methods:
                    if method in POOLING_METHODS:
                        mats = pooled_distances(pooled_ctx[method], metrics[pol])
                    elif method in DUAL_METHODS:
                        mats = slot_distances(
                            slot_ctx,
                            method,
                            similar_metrics=metrics["similar"],
                            dissimilar_metrics=metrics["dissimilar"],
                            wavg_weights=cfg.wavg_weights,
                        )
                    else:
                        mats = slot_distances(
                            slot_ctx, method, metrics=metrics[pol], wavg_weights=cfg.wavg_weights
                        )
                    normalized = {
                        ch: np.stack([normalize_distances(r) for r in mat])
                        for ch, mat in mats.items()
                    }
                    fused = fuse_distances(normalized, cfg.betas)
                    curve = cmc(fused, test_ids, test_ids)
                    key = (m_shots, n_shots, method.value, pol)
                    curves_acc.setdefault(key, []).append(curve.rates)
                    rank1_acc.setdefault(key, []).append(curve.rank1)

    curves = {k: np.mean(np.stack(v), axis=0) for k, v in curves_acc.items()}
    metadata = {
        "config_hash": config_fingerprint(cfg),
        "gallery_size": str(gallery_size),
        "methods": ",".join(m.value for m in methods),
        "n_identities": str(len(ids)),
        "n_images": str(n_img),
        "policies": ",".join(cfg.pos_policies),
        "seed": str(cfg.seed),
        "settings": ";".join(f"{m}x{n}" for m, n in cfg.settings),
        "trials": str(cfg.trials),
    }
    for key in sorted(curves):
        m, n, method, pol = key
        metadata[f"rank1_{method}_{m}x{n}_{pol}"] = f"{np.mean(rank1_acc[key]):.6f}"
    return ExperimentResult(
        curves=curves, rank1=rank1_acc, metadata=metadata, gallery_size=gallery_size
    )


def report(result: ExperimentResult, out_dir) -> list[Path]:
    """Write per-key CMC CSVs, rank-1 matrices, and run metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for key in sorted(result.curves):
        m, n, method, pol = key
        path = out / f"cmc_{method}_{m}x{n}_{pol}.csv"
        lines = ["rank,match_rate"]
        for r, rate in enumerate(result.curves[key], start=1):
            lines.append(f"{r},{rate:.6f}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    combos = sorted({(k[2], k[3]) for k in result.curves})
    for method, pol in combos:
        ms = sorted({k[0] for k in result.curves if (k[2], k[3]) == (method, pol)})
        ns = sorted({k[1] for k in result.curves if (k[2], k[3]) == (method, pol)})
        path = out / f"rank1_matrix_{method}_{pol}.csv"
        lines = ["probe_shots\\gallery_shots," + ",".join(str(n) for n in ns)]
        for m in ms:
            cells = [str(m)]
            for n in ns:
                key = (m, n, method, pol)
                cells.append(f"{np.mean(result.rank1[key]):.6f}" if key in result.rank1 else "")
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    meta = out / "run_metadata.txt"
    meta.write_text(
        "\n".join(f"{k}={v}" for k, v in sorted(result.metadata.items())) + "\n"
    )
    written.append(meta)
    return written

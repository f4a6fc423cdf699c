"""Command-line entry points: synth, train, evaluate, match.

Exit codes: 0 on success, 1 for usage problems, 2 for data or config
errors, 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image

from .archive import TrainedArchive, archive_digest, load_archive, save_archive
from .codebook import learn_codebook
from .config import RunConfig, config_hash, load_config
from .core import (
    CHANNELS,
    ConfigError,
    DataError,
    NumericError,
    PersonImage,
    ReidError,
    child_seed,
)
from .encoding import LlcParams, encode_image
from .evaluation import (
    ExperimentConfig,
    load_dataset,
    report,
    run_experiment,
    synth_generate,
    write_dataset,
)
from .features import resize_bilinear
from .metric import (
    FusionWeights,
    fit_kernel_pca,
    fit_kissme,
    generate_pairs,
    kpca_project,
)
from .odboa import DUAL_METHODS, MatchMethod, build_bag, match_bags
from .orientation import predict_orientation, train_orientation

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


@contextmanager
def _stage(name: str):
    try:
        yield
    except ReidError as exc:
        exc.args = (f"[{name}] {exc}",)
        raise


def _build_parser() -> _Parser:
    parser = _Parser(prog="reidkit", description="Person re-identification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True, help="output directory for PNGs and manifest.csv")
    p.add_argument("--persons", type=int, default=60)
    p.add_argument("--cameras", type=int, default=2)
    p.add_argument("--orientations", type=int, default=8, help="shots per camera, one per label")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=48)
    p.add_argument("--noise", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="fit codebooks, projections, metrics, and classifier")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--archive", default=None, help="override archive_dir from the config")

    p = sub.add_parser("evaluate", help="run repeated-trial CMC evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default=None, help="override method; 'all' runs every method")
    p.add_argument("--probe-shots", type=int, default=None)
    p.add_argument("--gallery-shots", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out", default=None, help="override output_dir from the config")

    p = sub.add_parser("match", help="score one probe bag against one gallery bag")
    p.add_argument("--archive", required=True)
    p.add_argument("--probe-images", nargs="+", required=True)
    p.add_argument("--gallery-images", nargs="+", required=True)
    p.add_argument("--probe-orientations", default=None, help="comma list, 0 = predict")
    p.add_argument("--gallery-orientations", default=None)
    p.add_argument("--method", default=None)
    p.add_argument("--seed", type=int, default=0)
    return parser


def cmd_synth(args) -> int:
    images = synth_generate(
        seed=args.seed,
        n_persons=args.persons,
        cameras=args.cameras,
        orientations_per_camera=args.orientations,
        height=args.height,
        width=args.width,
        noise_sigma=args.noise,
    )
    manifest = write_dataset(images, args.out)
    print(f"wrote {len(images)} images, manifest {manifest}")
    return 0


def _policies_for(cfg: RunConfig) -> list[str]:
    policies = {cfg.pos_policy}
    if cfg.train_dual_metrics or cfg.method in (m.value for m in DUAL_METHODS):
        policies |= {"similar", "dissimilar"}
    return sorted(policies)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.archive:
        cfg.archive_dir = args.archive
    if not cfg.manifest:
        raise ConfigError("training needs 'manifest' set in the config")
    if not cfg.archive_dir:
        raise ConfigError("training needs 'archive_dir' set (or pass --archive)")
    with _stage("load-dataset"):
        images = load_dataset(cfg.manifest, cfg.image_root, size=(cfg.resize_h, cfg.resize_w))
    llc = LlcParams(lam=cfg.llc_lambda, sigma=cfg.llc_sigma, k=cfg.llc_k)
    codebooks = {}
    with _stage("fit-codebooks"):
        for ci, ch in enumerate(CHANNELS):
            codebooks[ch] = learn_codebook(
                images,
                ch,
                child_seed(cfg.seed, 0, ci),
                sample_count=cfg.codebook_samples,
                m=cfg.codebook_size,
                max_iter=cfg.kmeans_max_iter,
                tol=cfg.kmeans_tol,
            )
    with _stage("encode-images"):
        sigs = [encode_image(img, codebooks, llc) for img in images]
        vecs = {ch: np.stack([s.vectors[ch] for s in sigs]) for ch in CHANNELS}
    pcas = {}
    proj = {}
    with _stage("fit-projections"):
        for ch in CHANNELS:
            pcas[ch] = fit_kernel_pca(vecs[ch], cfg.pca_dim, cfg.pca_bandwidth)
            proj[ch] = kpca_project(pcas[ch], vecs[ch])
    metrics = {}
    with _stage("fit-metrics"):
        records = [(img.person_id, img.camera_id, img.orientation) for img in images]
        for pi, pol in enumerate(_policies_for(cfg)):
            pos, neg = generate_pairs(
                records,
                pos_policy=pol,
                neg_policy=cfg.neg_policy,
                max_pairs=cfg.max_pairs,
                seed=child_seed(cfg.seed, 1, pi),
            )
            metrics[pol] = {ch: fit_kissme(proj[ch][pos], proj[ch][neg]) for ch in CHANNELS}
    classifier = None
    labels_complete = all(img.orientation is not None for img in images)
    if cfg.fit_orientation_estimator == "always" or (
        cfg.fit_orientation_estimator == "auto" and labels_complete
    ):
        with _stage("fit-orientation"):
            classifier = train_orientation(
                images,
                child_seed(cfg.seed, 2),
                epochs=cfg.svm_epochs,
                reg=cfg.svm_reg,
                resize=(cfg.resize_h, cfg.resize_w),
            )
    with _stage("save-archive"):
        archive = TrainedArchive(
            codebooks=codebooks,
            pcas=pcas,
            metrics=metrics,
            classifier=classifier,
            config=dataclasses.asdict(cfg) | {"smoothing_kernel": list(cfg.smoothing_kernel)},
            seed=cfg.seed,
        )
        save_archive(cfg.archive_dir, archive)
    digest = archive_digest(cfg.archive_dir)
    print(f"archive written to {cfg.archive_dir} (digest {digest[:16]})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    if args.method:
        cfg.method = args.method
    if args.probe_shots:
        cfg.probe_shots = args.probe_shots
    if args.gallery_shots:
        cfg.gallery_shots = args.gallery_shots
    if args.trials:
        cfg.trials = args.trials
    if args.out:
        cfg.output_dir = args.out
    if cfg.method != "all" and cfg.method not in (m.value for m in MatchMethod):
        raise ConfigError(f"unknown method {cfg.method!r}")
    if not cfg.manifest:
        raise ConfigError("evaluation needs 'manifest' set in the config")
    if not cfg.output_dir:
        raise ConfigError("evaluation needs 'output_dir' set (or pass --out)")
    methods = (
        tuple(MatchMethod) if cfg.method == "all" else (MatchMethod(cfg.method),)
    )
    with _stage("load-dataset"):
        images = load_dataset(cfg.manifest, cfg.image_root, size=(cfg.resize_h, cfg.resize_w))
    ecfg = ExperimentConfig(
        methods=methods,
        settings=((cfg.probe_shots, cfg.gallery_shots),),
        pos_policies=(cfg.pos_policy,),
        neg_policy=cfg.neg_policy,
        trials=cfg.trials,
        seed=cfg.seed,
        probe_camera=cfg.probe_camera,
        gallery_camera=cfg.gallery_camera,
        codebook_size=cfg.codebook_size,
        codebook_samples=cfg.codebook_samples,
        kmeans_max_iter=cfg.kmeans_max_iter,
        kmeans_tol=cfg.kmeans_tol,
        llc_k=cfg.llc_k,
        llc_lambda=cfg.llc_lambda,
        pca_dim=cfg.pca_dim,
        pca_bandwidth=cfg.pca_bandwidth,
        max_pairs=cfg.max_pairs,
        betas=FusionWeights(whsv=cfg.beta_whsv, lab=cfg.beta_lab, sift=cfg.beta_sift),
        wavg_weights=(cfg.wavg_same, cfg.wavg_adjacent, cfg.wavg_other),
        weight_sigma_frac=cfg.weight_sigma_frac,
        fit_orientation=cfg.fit_orientation_estimator,
        smoothing_kernel=cfg.smoothing_kernel,
        svm_epochs=cfg.svm_epochs,
        svm_reg=cfg.svm_reg,
    )
    with _stage("evaluate"):
        result = run_experiment(ecfg, images)
    written = report(result, cfg.output_dir)
    for key in sorted(result.curves):
        m, n, method, pol = key
        print(f"rank1 {method} {m}x{n} {pol} = {np.mean(result.rank1[key]):.4f}")
    print(f"wrote {len(written)} report file(s) to {cfg.output_dir}")
    return 0


def _parse_orientations(text, count: int, side: str):
    if text is None:
        return [None] * count
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != count:
        raise DataError(
            f"{side}: got {len(parts)} orientation value(s) for {count} image(s)"
        )
    out = []
    for p in parts:
        try:
            v = int(p)
        except ValueError:
            raise DataError(f"{side}: orientation {p!r} is not an integer") from None
        if not 0 <= v <= 8:
            raise DataError(f"{side}: orientation must be 0 (predict) or 1..8, got {v}")
        out.append(v if v else None)
    return out


def _load_match_images(paths, orientations, person: str, camera: int, size) -> list[PersonImage]:
    h, w = size
    images = []
    for path, orient in zip(paths, orientations):
        p = Path(path)
        if not p.is_file():
            raise DataError(f"image not found: {p}")
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float64)
        if arr.shape[:2] != (h, w):
            arr = resize_bilinear(arr, h, w)
        px = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
        images.append(PersonImage(px, person_id=person, camera_id=camera, orientation=orient))
    return images


def cmd_match(args) -> int:
    archive = load_archive(args.archive)
    cfg = archive.config or {}
    size = (int(cfg.get("resize_h", 128)), int(cfg.get("resize_w", 48)))
    llc = LlcParams(
        lam=float(cfg.get("llc_lambda", 1e-4)),
        sigma=float(cfg.get("llc_sigma", 1.0)),
        k=int(cfg.get("llc_k", 5)),
    )
    method = MatchMethod(args.method or cfg.get("method", MatchMethod.ODBOA_MID_POOLING.value))
    probe_orients = _parse_orientations(args.probe_orientations, len(args.probe_images), "probe")
    gallery_orients = _parse_orientations(
        args.gallery_orientations, len(args.gallery_images), "gallery"
    )
    probe_imgs = _load_match_images(args.probe_images, probe_orients, "probe", 0, size)
    gallery_imgs = _load_match_images(args.gallery_images, gallery_orients, "gallery", 1, size)

    kernel = tuple(cfg.get("smoothing_kernel", (0.25, 0.5, 0.25)))
    def resolve(img: PersonImage) -> PersonImage:
        if img.orientation is not None:
            return img
        if archive.classifier is None:
            raise DataError(
                "an image has no orientation label and the archive holds no "
                "orientation classifier; pass explicit orientations or retrain"
            )
        pred = predict_orientation(archive.classifier, img, kernel=kernel)
        return dataclasses.replace(img, orientation=pred)

    probe_imgs = [resolve(i) for i in probe_imgs]
    gallery_imgs = [resolve(i) for i in gallery_imgs]
    probe_bag = build_bag([encode_image(i, archive.codebooks, llc) for i in probe_imgs])
    gallery_bag = build_bag([encode_image(i, archive.codebooks, llc) for i in gallery_imgs])

    pol = cfg.get("pos_policy", "similar")
    if pol not in archive.metrics:
        raise DataError(f"archive lacks a metric for policy {pol!r}")
    betas = FusionWeights(
        whsv=float(cfg.get("beta_whsv", 2.0)),
        lab=float(cfg.get("beta_lab", 1.0)),
        sift=float(cfg.get("beta_sift", 1.0)),
    )
    kwargs = {}
    if method in DUAL_METHODS:
        for need in ("similar", "dissimilar"):
            if need not in archive.metrics:
                raise DataError(
                    f"method {method.value} needs the {need!r} metric; retrain with "
                    "train_dual_metrics enabled"
                )
        kwargs["similar_metrics"] = archive.metrics["similar"]
        kwargs["dissimilar_metrics"] = archive.metrics["dissimilar"]
    else:
        kwargs["metrics"] = archive.metrics[pol]
    wavg = (
        float(cfg.get("wavg_same", 1.0)),
        float(cfg.get("wavg_adjacent", 0.9)),
        float(cfg.get("wavg_other", 0.4)),
    )
    result = match_bags(
        probe_bag,
        gallery_bag,
        archive.pcas,
        method,
        betas=betas,
        seed=args.seed,
        wavg_weights=wavg,
        **kwargs,
    )
    print(f"score={result.score:.6f}")
    if result.selection is not None and not result.selection.fallback:
        pairs = ";".join(f"({i},{j})" for i, j in result.selection.pairs)
    elif result.selection is not None:
        pairs = ";".join(f"({i},{j})" for i, j in zip(
            result.selection.probe_slots, result.selection.gallery_slots
        ))
    else:
        pairs = ""
    print(f"pairs={pairs}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "match": cmd_match,
    }
    try:
        return handlers[args.command](args)
    except DataError as exc:
        print(f"reidkit: data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericError as exc:
        print(f"reidkit: numeric error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())

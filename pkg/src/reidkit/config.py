"""JSON run configuration: strict loading, saving, and hashing.

Unknown keys are rejected rather than ignored so a typo cannot silently
fall back to a default. save_config followed by load_config round-trips
losslessly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .core import ConfigError
from .odboa import MatchMethod

PAIR_POLICY_NAMES = ("all", "similar", "same", "dissimilar")
ORIENTATION_MODES = ("auto", "always", "never")


@dataclass
class RunConfig:
    manifest: str | None = None
    image_root: str | None = None
    archive_dir: str | None = None
    output_dir: str | None = None
    resize_h: int = 128
    resize_w: int = 48
    probe_camera: int = 0
    gallery_camera: int = 1
    method: str = MatchMethod.ODBOA_MID_POOLING.value
    probe_shots: int = 1
    gallery_shots: int = 1
    trials: int = 10
    seed: int = 0
    codebook_size: int = 1024
    codebook_samples: int = 5000
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-4
    llc_k: int = 5
    llc_lambda: float = 1e-4
    llc_sigma: float = 1.0
    pca_dim: int = 80
    pca_bandwidth: float = 0.8
    pos_policy: str = "similar"
    neg_policy: str = "all"
    max_pairs: int | None = None
    beta_whsv: float = 2.0
    beta_lab: float = 1.0
    beta_sift: float = 1.0
    weight_sigma_frac: float = 0.25
    smoothing_kernel: tuple = (0.25, 0.5, 0.25)
    svm_epochs: int = 50
    svm_reg: float = 1e-4
    fit_orientation_estimator: str = "auto"
    train_dual_metrics: bool = False
    wavg_same: float = 1.0
    wavg_adjacent: float = 0.9
    wavg_other: float = 0.4


_METHOD_NAMES = tuple(m.value for m in MatchMethod)


def validate_config(cfg: RunConfig) -> RunConfig:
    if cfg.method != "all" and cfg.method not in _METHOD_NAMES:
        raise ConfigError(
            f"unknown method {cfg.method!r}; pick one of {', '.join(_METHOD_NAMES)} or 'all'"
        )
    for name in ("pos_policy", "neg_policy"):
        value = getattr(cfg, name)
        if value not in PAIR_POLICY_NAMES:
            raise ConfigError(f"{name} must be one of {', '.join(PAIR_POLICY_NAMES)}, got {value!r}")
    if cfg.fit_orientation_estimator not in ORIENTATION_MODES:
        raise ConfigError(
            f"fit_orientation_estimator must be one of {', '.join(ORIENTATION_MODES)}, "
            f"got {cfg.fit_orientation_estimator!r}"
        )
    positive = (
        "probe_shots", "gallery_shots", "trials", "codebook_size", "codebook_samples",
        "kmeans_max_iter", "llc_k", "pca_dim", "svm_epochs", "resize_h", "resize_w",
    )
    for name in positive:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be a positive integer")
    if len(cfg.smoothing_kernel) % 2 == 0:
        raise ConfigError("smoothing_kernel needs an odd number of taps")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if "smoothing_kernel" in data:
        data["smoothing_kernel"] = tuple(data["smoothing_kernel"])
    return validate_config(RunConfig(**data))


def save_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    data = asdict(cfg)
    data["smoothing_kernel"] = list(cfg.smoothing_kernel)
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")
    return path


def config_hash(cfg: RunConfig) -> str:
    data = asdict(cfg)
    data["smoothing_kernel"] = list(cfg.smoothing_kernel)
    blob = json.dumps(data, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]

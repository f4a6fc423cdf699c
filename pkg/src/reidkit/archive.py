"""On-disk persistence for trained models.

An archive is a directory of raw little-endian float32 ``.npy`` files plus
one ``manifest.json`` carrying scalars, per-file sha256 hashes, and an
overall digest. Arrays are stored individually (never zipped) so the bytes
written depend only on the values, making reruns byte-identical.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codebook import BodyStructureCodebook, SubCodebook
from .core import Channel, ManifestError
from .encoding import Signature
from .metric import KernelPcaModel, MetricModel
from .odboa import AppearanceBag, BagSlot
from .orientation import OrientationClassifier
from .pyramid import N_PARTS

FORMAT_VERSION = 1
ARRAY_DTYPE = "<f4"


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _save_arrays(dir_path, kind: str, arrays: dict, extra: dict) -> Path:
    """Write arrays as float32 .npy files plus a hashed manifest."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name in sorted(arrays):
        path = out / f"{name}.npy"
        np.save(path, np.ascontiguousarray(arrays[name], dtype=ARRAY_DTYPE))
        hashes[name] = _file_sha256(path)
    digest_src = json.dumps(
        {"extra": extra, "files": hashes, "kind": kind}, sort_keys=True, default=str
    )
    manifest = {
        "digest": hashlib.sha256(digest_src.encode()).hexdigest(),
        "extra": extra,
        "files": hashes,
        "format_version": FORMAT_VERSION,
        "kind": kind,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1, default=str) + "\n")
    return out


def _load_arrays(dir_path, kind: str) -> tuple[dict, dict]:
    out = Path(dir_path)
    mpath = out / "manifest.json"
    if not mpath.is_file():
        raise ManifestError(f"{out} has no manifest.json")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ManifestError(
            f"{out}: unsupported format_version {manifest.get('format_version')!r}"
        )
    if manifest.get("kind") != kind:
        raise ManifestError(f"{out}: expected kind {kind!r}, found {manifest.get('kind')!r}")
    arrays = {}
    for name, want in manifest["files"].items():
        path = out / f"{name}.npy"
        if not path.is_file():
            raise ManifestError(f"{out}: missing array file {name}.npy")
        got = _file_sha256(path)
        if got != want:
            raise ManifestError(f"{out}: {name}.npy is corrupt (sha256 mismatch)")
        arrays[name] = np.load(path).astype(np.float64)
    return arrays, manifest["extra"]


def archive_digest(dir_path) -> str:
    mpath = Path(dir_path) / "manifest.json"
    if not mpath.is_file():
        raise ManifestError(f"{dir_path} has no manifest.json")
    return json.loads(mpath.read_text())["digest"]


def save_codebook(dir_path, cb: BodyStructureCodebook, seed=None) -> Path:
    arrays = {
        f"part{a + 1}": cb.sub_codebooks[a].entries for a in range(N_PARTS)
    }
    extra = {
        "channel": cb.channel.value,
        "entries": cb.sub_codebooks[0].entries.shape[0],
        "dim": cb.sub_codebooks[0].entries.shape[1],
        "seed": seed,
    }
    return _save_arrays(dir_path, "codebook", arrays, extra)


def load_codebook(dir_path) -> BodyStructureCodebook:
    arrays, extra = _load_arrays(dir_path, "codebook")
    ch = Channel(extra["channel"])
    subs = tuple(
        SubCodebook(part_index=a, channel=ch, entries=arrays[f"part{a + 1}"])
        for a in range(N_PARTS)
    )
    return BodyStructureCodebook(channel=ch, sub_codebooks=subs)


def _pca_arrays(prefix: str, pca: KernelPcaModel) -> dict:
    return {
        f"{prefix}_refs": pca.refs,
        f"{prefix}_alphas": pca.alphas,
        f"{prefix}_eigenvalues": pca.eigenvalues,
        f"{prefix}_col_means": pca.col_means,
    }


def _pca_from(prefix: str, arrays: dict, extra: dict) -> KernelPcaModel:
    return KernelPcaModel(
        refs=arrays[f"{prefix}_refs"],
        alphas=arrays[f"{prefix}_alphas"],
        eigenvalues=arrays[f"{prefix}_eigenvalues"],
        bandwidth=float(extra[f"{prefix}_bandwidth"]),
        col_means=arrays[f"{prefix}_col_means"],
        grand_mean=float(extra[f"{prefix}_grand_mean"]),
    )


@dataclass
class TrainedArchive:
    """Everything a match or evaluation run needs from training."""

    codebooks: dict  # Channel -> BodyStructureCodebook
    pcas: dict  # Channel -> KernelPcaModel
    metrics: dict  # policy -> Channel -> MetricModel
    classifier: OrientationClassifier | None
    config: dict
    seed: int


def save_archive(dir_path, archive: TrainedArchive) -> Path:
    arrays: dict = {}
    extra: dict = {
        "channels": [ch.value for ch in archive.codebooks],
        "policies": sorted(archive.metrics),
        "config": archive.config,
        "seed": archive.seed,
        "has_classifier": archive.classifier is not None,
    }
    for ch, cb in archive.codebooks.items():
        for a in range(N_PARTS):
            arrays[f"codebook_{ch.value}_part{a + 1}"] = cb.sub_codebooks[a].entries
    for ch, pca in archive.pcas.items():
        prefix = f"pca_{ch.value}"
        arrays.update(_pca_arrays(prefix, pca))
        extra[f"{prefix}_bandwidth"] = pca.bandwidth
        extra[f"{prefix}_grand_mean"] = pca.grand_mean
    for pol, per_channel in archive.metrics.items():
        for ch, model in per_channel.items():
            arrays[f"metric_{pol}_{ch.value}"] = model.matrix
    if archive.classifier is not None:
        clf = archive.classifier
        arrays["classifier_weights"] = clf.weights
        arrays["classifier_biases"] = clf.biases
        arrays["classifier_scale"] = clf.calib_scale
        arrays["classifier_offset"] = clf.calib_offset
        extra["classifier_resize"] = list(clf.resize)
    return _save_arrays(dir_path, "trained-archive", arrays, extra)


def load_archive(dir_path) -> TrainedArchive:
    arrays, extra = _load_arrays(dir_path, "trained-archive")
    channels = [Channel(v) for v in extra["channels"]]
    codebooks = {}
    for ch in channels:
        subs = tuple(
            SubCodebook(
                part_index=a, channel=ch, entries=arrays[f"codebook_{ch.value}_part{a + 1}"]
            )
            for a in range(N_PARTS)
        )
        codebooks[ch] = BodyStructureCodebook(channel=ch, sub_codebooks=subs)
    pcas = {ch: _pca_from(f"pca_{ch.value}", arrays, extra) for ch in channels}
    metrics = {
        pol: {
            ch: MetricModel(matrix=arrays[f"metric_{pol}_{ch.value}"], channel=ch)
            for ch in channels
        }
        for pol in extra["policies"]
    }
    classifier = None
    if extra.get("has_classifier"):
        classifier = OrientationClassifier(
            weights=arrays["classifier_weights"],
            biases=arrays["classifier_biases"],
            calib_scale=arrays["classifier_scale"],
            calib_offset=arrays["classifier_offset"],
            resize=tuple(extra["classifier_resize"]),
        )
    return TrainedArchive(
        codebooks=codebooks,
        pcas=pcas,
        metrics=metrics,
        classifier=classifier,
        config=extra.get("config", {}),
        seed=extra.get("seed", 0),
    )


def save_signatures(dir_path, signatures) -> Path:
    sigs = list(signatures)
    if not sigs:
        raise ManifestError("nothing to save: no signatures")
    channels = sorted(sigs[0].vectors, key=lambda c: c.value)
    arrays = {}
    for ch in channels:
        arrays[f"vec_{ch.value}"] = np.stack([s.vectors[ch] for s in sigs])
        arrays[f"raw_{ch.value}"] = np.stack([s.raw[ch] for s in sigs])
    extra = {
        "channels": [ch.value for ch in channels],
        "person_ids": [str(s.person_id) for s in sigs],
        "camera_ids": [None if s.camera_id is None else int(s.camera_id) for s in sigs],
        "orientations": [None if s.orientation is None else int(s.orientation) for s in sigs],
    }
    return _save_arrays(dir_path, "signatures", arrays, extra)


def load_signatures(dir_path) -> list[Signature]:
    arrays, extra = _load_arrays(dir_path, "signatures")
    channels = [Channel(v) for v in extra["channels"]]
    out = []
    for i, pid in enumerate(extra["person_ids"]):
        cam = extra["camera_ids"][i]
        orient = extra["orientations"][i]
        out.append(
            Signature(
                vectors={ch: arrays[f"vec_{ch.value}"][i] for ch in channels},
                raw={ch: arrays[f"raw_{ch.value}"][i] for ch in channels},
                person_id=pid,
                camera_id=None if cam is None else int(cam),
                orientation=None if orient is None else int(orient),
            )
        )
    return out


def save_bag(dir_path, bag: AppearanceBag) -> Path:
    channels = sorted(
        next(iter(bag.slots.values())).vectors, key=lambda c: c.value
    )
    arrays = {}
    for orient, slot in bag.slots.items():
        for ch in channels:
            arrays[f"vec_{ch.value}_o{orient}"] = slot.vectors[ch]
            arrays[f"raw_{ch.value}_o{orient}"] = slot.raw[ch]
    extra = {
        "channels": [ch.value for ch in channels],
        "person_id": str(bag.person_id),
        "camera_id": None if bag.camera_id is None else int(bag.camera_id),
        "slots": bag.occupied(),
        "frames": [bag.slots[o].frames for o in bag.occupied()],
    }
    return _save_arrays(dir_path, "appearance-bag", arrays, extra)


def load_bag(dir_path) -> AppearanceBag:
    arrays, extra = _load_arrays(dir_path, "appearance-bag")
    channels = [Channel(v) for v in extra["channels"]]
    slots = {}
    for pos, orient in enumerate(extra["slots"]):
        slots[int(orient)] = BagSlot(
            vectors={ch: arrays[f"vec_{ch.value}_o{orient}"] for ch in channels},
            raw={ch: arrays[f"raw_{ch.value}_o{orient}"] for ch in channels},
            frames=int(extra["frames"][pos]),
        )
    cam = extra["camera_id"]
    return AppearanceBag(
        person_id=extra["person_id"],
        camera_id=None if cam is None else int(cam),
        slots=slots,
    )

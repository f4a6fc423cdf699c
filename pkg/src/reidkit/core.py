"""Shared domain types: orientation arithmetic, image container, error taxonomy.

Orientation labels are integers 1..8 walking the compass circle
(1=R, 2=BR, 3=B, 4=BL, 5=L, 6=FL, 7=F, 8=FR). All circular arithmetic
lives here so every module agrees on the wrap rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

N_ORIENTATIONS = 8

ORIENTATION_NAMES = {
    1: "R", 2: "BR", 3: "B", 4: "BL", 5: "L", 6: "FL", 7: "F", 8: "FR",
}


class ReidError(Exception):
    """Base class for toolkit errors."""


class DataError(ReidError):
    """Malformed or insufficient input data."""


class NumericError(ReidError):
    """A numeric routine could not produce a usable result."""


class ImageTooSmallError(DataError):
    pass


class HeightTooSmallError(DataError):
    pass


class TooFewPointsError(DataError):
    pass


class InsufficientDescriptorsError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class DegenerateLabelsError(DataError):
    pass


class EmptyBagError(DataError):
    pass


class MixedIdentityError(DataError):
    pass


class NoValidPairsError(DataError):
    pass


class ManifestError(DataError):
    pass


class GalleryMismatchError(DataError):
    pass


class ConfigError(DataError):
    pass


class SingularSystemError(NumericError):
    pass


class SingularCovarianceError(NumericError):
    pass


class RankDeficientError(NumericError):
    pass


class Channel(str, Enum):
    """Descriptor channel tags used throughout the pipeline."""

    WHSV = "whsv"
    LAB = "lab"
    SIFT = "sift"


CHANNELS = (Channel.WHSV, Channel.LAB, Channel.SIFT)


def check_orientation(value: int) -> int:
    """Validate an orientation label, returning it as a plain int."""
    v = int(value)
    if not 1 <= v <= N_ORIENTATIONS:
        raise ValueError(f"orientation label must be in 1..{N_ORIENTATIONS}, got {value!r}")
    return v


def orientation_mod(i: int, k: int) -> int:
    """Step label i by k positions around the circle (k may be negative).

    Uses floored modulo so the result is always in 1..8, e.g. (1, -1) -> 8.
    """
    i = check_orientation(i)
    return (i + int(k) - 1) % N_ORIENTATIONS + 1


def orientation_distance(a: int, b: int) -> int:
    """Circular distance between two labels, in 0..4."""
    a = check_orientation(a)
    b = check_orientation(b)
    d = abs(a - b)
    return min(d, N_ORIENTATIONS - d)


def is_similar_orientation(a: int, b: int) -> bool:
    """True when the two labels are identical or adjacent on the circle."""
    return orientation_distance(a, b) <= 1


def rng_from(seed) -> np.random.Generator:
    """Build a Generator from an int seed, SeedSequence, or pass one through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def child_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Derive an independent named stream from a master seed.

    The spawn key makes streams for distinct purposes (trial index,
    part index, ...) independent while staying reproducible.
    """
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


@dataclass(frozen=True)
class PersonImage:
    """A pedestrian crop with identity, camera, and optional orientation label.

    pixels is HxWx3 uint8 RGB, at least 16 px on each side. orientation is
    None when unknown.
    """

    pixels: np.ndarray
    person_id: object
    camera_id: int
    orientation: int | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageTooSmallError(f"expected HxWx3 pixel array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.integer) and px.min() >= 0 and px.max() <= 255:
                px = px.astype(np.uint8)
            else:
                raise ImageTooSmallError(f"pixel dtype must be uint8-compatible, got {px.dtype}")
        h, w = px.shape[:2]
        if h < 16 or w < 16:
            raise ImageTooSmallError(f"image must be at least 16x16, got {h}x{w}")
        object.__setattr__(self, "pixels", px)
        if self.orientation is not None:
            object.__setattr__(self, "orientation", check_orientation(self.orientation))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

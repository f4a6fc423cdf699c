"""Body-structure pyramid: three nested horizontal partitions of a crop.

Level 1 is the whole image. Level 2 splits it into head / torso / legs
at 16% / 29% / 55% of the height (rounded half-up, legs absorb the
residual). Level 3 halves torso and legs but keeps the head whole, so
the head strip is shared between levels 2 and 3 and the pyramid exposes
8 distinct parts in a fixed order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import HeightTooSmallError

HEAD_FRAC = 0.16
TORSO_FRAC = 0.29

# canonical part order; indices into BodyStructurePyramid.parts
PART_NAMES = (
    "whole",
    "head",
    "torso",
    "legs",
    "torso_upper",
    "torso_lower",
    "legs_upper",
    "legs_lower",
)
N_PARTS = len(PART_NAMES)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PartRegion:
    """One horizontal strip: rows y0 (inclusive) to y1 (exclusive)."""

    index: int
    name: str
    level: int
    y0: int
    y1: int

    def contains(self, y: float) -> bool:
        return self.y0 <= y < self.y1


@dataclass(frozen=True)
class BodyStructurePyramid:
    height: int
    width: int
    parts: tuple[PartRegion, ...]

    def level_regions(self, level: int) -> tuple[PartRegion, ...]:
        """Strips covering [0, height) at the given level (1, 2 or 3).

        The head strip serves both level 2 and level 3.
        """
        if level == 1:
            return (self.parts[0],)
        if level == 2:
            return tuple(self.parts[i] for i in (1, 2, 3))
        if level == 3:
            return tuple(self.parts[i] for i in (1, 4, 5, 6, 7))
        raise ValueError(f"pyramid has levels 1..3, got {level}")


def build_pyramid(height: int, width: int) -> BodyStructurePyramid:
    """Partition a height-px crop into the 8 canonical parts.

    Raises HeightTooSmallError when any strip would be empty.
    """
    h = int(height)
    if h < 8:
        raise HeightTooSmallError(f"pyramid needs height >= 8, got {h}")
    head_h = _round_half_up(HEAD_FRAC * h)
    torso_h = _round_half_up(TORSO_FRAC * h)
    legs_h = h - head_h - torso_h
    torso_half = torso_h // 2
    legs_half = legs_h // 2
    head_y1 = head_h
    torso_y1 = head_h + torso_h

    bounds = {
        "whole": (0, h, 1),
        "head": (0, head_y1, 2),
        "torso": (head_y1, torso_y1, 2),
        "legs": (torso_y1, h, 2),
        "torso_upper": (head_y1, head_y1 + torso_half, 3),
        "torso_lower": (head_y1 + torso_half, torso_y1, 3),
        "legs_upper": (torso_y1, torso_y1 + legs_half, 3),
        "legs_lower": (torso_y1 + legs_half, h, 3),
    }
    parts = []
    for idx, name in enumerate(PART_NAMES):
        y0, y1, level = bounds[name]
        if y1 <= y0:
            raise HeightTooSmallError(
                f"height {h} leaves part '{name}' empty ([{y0}, {y1}))"
            )
        parts.append(PartRegion(index=idx, name=name, level=level, y0=y0, y1=y1))
    return BodyStructurePyramid(height=h, width=int(width), parts=tuple(parts))


def assign_center_y(pyr: BodyStructurePyramid, center_y: float) -> tuple[int, int, int]:
    """Part index at each level for a patch whose center row is center_y.

    Head patches get the same index at levels 2 and 3 (the strip is shared).
    """
    if not 0 <= center_y < pyr.height:
        raise ValueError(f"center y {center_y} outside [0, {pyr.height})")
    level2 = next(p for p in pyr.level_regions(2) if p.contains(center_y))
    if level2.name == "head":
        level3 = level2
    else:
        level3 = next(
            p for p in pyr.level_regions(3) if p.level == 3 and p.contains(center_y)
        )
    return (0, level2.index, level3.index)


def assign_patch(patch, pyr: BodyStructurePyramid) -> tuple[int, int, int]:
    """Part index per level for a Patch (uses its center row)."""
    return assign_center_y(pyr, patch.center[1])

"""Low-level appearance features over a dense patch grid.

Color channels are 4x4x4 joint histograms (wHSV weighted by a horizontal
Gaussian prior, LAB unweighted). The gradient channel is a 128-D SIFT-style
descriptor on a 16x16 support around each patch center. HOG (9 unsigned
bins, 8x8 cells, 2x2-cell blocks, L2-hys) feeds orientation estimation.

Batch functions return one row per patch in row-major grid order; the
single-patch functions are thin wrappers that exist for spot checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Channel, DimensionMismatchError, ImageTooSmallError

PATCH_SIZE = 8
PATCH_STRIDE = 4
HIST_BINS_PER_AXIS = 4
COLOR_DIM = HIST_BINS_PER_AXIS ** 3  # 64
SIFT_SUPPORT = 16
SIFT_CELLS = 4
SIFT_ORI_BINS = 8
SIFT_DIM = SIFT_CELLS * SIFT_CELLS * SIFT_ORI_BINS  # 128
SIFT_CLIP = 0.2
HOG_CELL = 8
HOG_BINS = 9
HOG_BLOCK = 2
HOG_CLIP = 0.2

CHANNEL_DIMS = {Channel.WHSV: COLOR_DIM, Channel.LAB: COLOR_DIM, Channel.SIFT: SIFT_DIM}

# sRGB -> XYZ (D65 white point, 2 degree observer)
_SRGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def _pixels(img) -> np.ndarray:
    if hasattr(img, "pixels"):
        return np.asarray(img.pixels)
    return np.asarray(img)


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma on the 0..255 scale."""
    arr = np.asarray(rgb, dtype=np.float64)
    return arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone HSV; all three components in [0, 1] (hue wraps below 1)."""
    arr = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    v = arr.max(axis=-1)
    c = v - arr.min(axis=-1)
    safe_v = np.where(v > 0, v, 1.0)
    s = np.where(v > 0, c / safe_v, 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    # channel owning the max decides the hue sector; red wins ties, then green
    rmax = (c > 0) & (v == r)
    gmax = (c > 0) & (v == g) & ~rmax
    bmax = (c > 0) & ~rmax & ~gmax
    h = np.zeros_like(v)
    h = np.where(rmax, ((g - b) / safe_c) % 6.0, h)
    h = np.where(gmax, (b - r) / safe_c + 2.0, h)
    h = np.where(bmax, (r - g) / safe_c + 4.0, h)
    return np.stack([h / 6.0, s, v], axis=-1)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """CIELAB via sRGB linearization and the D65 white point."""
    arr = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(arr <= 0.04045, arr / 12.92, ((arr + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / _D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(xyz > delta**3, np.cbrt(xyz), xyz / (3.0 * delta**2) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    return lab


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample (pixel-center convention, edges clamped).

    Returns float64; callers quantize if they need uint8.
    """
    arr = np.asarray(_pixels(img), dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[..., None]
    h, w = arr.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = arr[y0][:, x0] * (1.0 - wx) + arr[y0][:, x1] * wx
    bot = arr[y1][:, x0] * (1.0 - wx) + arr[y1][:, x1] * wx
    out = top * (1.0 - wy) + bot * wy
    return out[..., 0] if squeeze else out


@dataclass(frozen=True)
class Patch:
    """An 8x8 window at top-left (x0, y0); center is offset by size // 2."""

    x0: int
    y0: int
    size: int = PATCH_SIZE

    @property
    def center(self) -> tuple[int, int]:
        return (self.x0 + self.size // 2, self.y0 + self.size // 2)


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray
    channel: Channel
    center: tuple[int, int]


def patch_grid_positions(h: int, w: int, size: int = PATCH_SIZE, stride: int = PATCH_STRIDE):
    """Top-left y and x offsets of the dense grid (full containment)."""
    if h < size or w < size:
        raise ImageTooSmallError(f"image {h}x{w} smaller than patch size {size}")
    ys = np.arange(0, h - size + 1, stride, dtype=np.int64)
    xs = np.arange(0, w - size + 1, stride, dtype=np.int64)
    return ys, xs


def extract_patch_grid(img, size: int = PATCH_SIZE, stride: int = PATCH_STRIDE) -> list[Patch]:
    """Row-major list of patches; 128x48 yields 31*11 = 341 of them."""
    arr = _pixels(img)
    ys, xs = patch_grid_positions(arr.shape[0], arr.shape[1], size, stride)
    return [Patch(int(x), int(y), size) for y in ys for x in xs]


def grid_center_ys(h: int, w: int, size: int = PATCH_SIZE, stride: int = PATCH_STRIDE) -> np.ndarray:
    """Center row of every grid patch, row-major (matches batch descriptor order)."""
    ys, xs = patch_grid_positions(h, w, size, stride)
    return np.repeat(ys + size // 2, len(xs))


def build_weight_map(height: int, width: int, sigma_frac: float = 0.25) -> np.ndarray:
    """Horizontal Gaussian prior centered mid-width, constant down columns."""
    x = np.arange(width, dtype=np.float64)
    cx = (width - 1) / 2.0
    sigma = sigma_frac * width
    row = np.exp(-((x - cx) ** 2) / (2.0 * sigma * sigma))
    return np.tile(row, (int(height), 1))


def _window_stack(arr: np.ndarray, ys: np.ndarray, xs: np.ndarray, size: int) -> np.ndarray:
    """(n_patches, size*size) view-copy of each patch window, row-major."""
    win = sliding_window_view(arr, (size, size))[ys][:, xs]
    return win.reshape(len(ys) * len(xs), size * size)


def _patch_histograms(bins, weights, ys, xs, size, n_bins):
    flat_bins = _window_stack(bins, ys, xs, size)
    flat_w = _window_stack(weights, ys, xs, size)
    n = flat_bins.shape[0]
    offset = np.arange(n, dtype=np.int64)[:, None] * n_bins
    hist = np.bincount(
        (flat_bins + offset).ravel(), weights=flat_w.ravel(), minlength=n * n_bins
    )
    return hist.reshape(n, n_bins)


def _l1_normalize(hist: np.ndarray) -> np.ndarray:
    sums = hist.sum(axis=1, keepdims=True)
    uniform = 1.0 / hist.shape[1]
    safe = np.where(sums > 0, sums, 1.0)
    return np.where(sums > 0, hist / safe, uniform)


def _hsv_joint_bins(hsv: np.ndarray) -> np.ndarray:
    idx = np.minimum((hsv * HIST_BINS_PER_AXIS).astype(np.int64), HIST_BINS_PER_AXIS - 1)
    return (idx[..., 0] * HIST_BINS_PER_AXIS + idx[..., 1]) * HIST_BINS_PER_AXIS + idx[..., 2]


def _lab_joint_bins(lab: np.ndarray) -> np.ndarray:
    # L in [0,100]; a,b binned uniformly over [-128, 128) in 64-wide bins
    l_idx = np.clip(np.floor(lab[..., 0] / 25.0), 0, 3).astype(np.int64)
    a_idx = np.clip(np.floor((lab[..., 1] + 128.0) / 64.0), 0, 3).astype(np.int64)
    b_idx = np.clip(np.floor((lab[..., 2] + 128.0) / 64.0), 0, 3).astype(np.int64)
    return (l_idx * HIST_BINS_PER_AXIS + a_idx) * HIST_BINS_PER_AXIS + b_idx


def whsv_descriptors(
    img, weight_map: np.ndarray | None = None,
    size: int = PATCH_SIZE, stride: int = PATCH_STRIDE,
) -> np.ndarray:
    """Weighted joint HSV histograms, one L1-normalized row per grid patch."""
    arr = _pixels(img)
    h, w = arr.shape[:2]
    if weight_map is None:
        weight_map = build_weight_map(h, w)
    weight_map = np.asarray(weight_map, dtype=np.float64)
    if weight_map.shape != (h, w):
        raise DimensionMismatchError(
            f"weight map {weight_map.shape} does not match image {(h, w)}"
        )
    bins = _hsv_joint_bins(rgb_to_hsv(arr))
    ys, xs = patch_grid_positions(h, w, size, stride)
    return _l1_normalize(_patch_histograms(bins, weight_map, ys, xs, size, COLOR_DIM))


def lab_descriptors(img, size: int = PATCH_SIZE, stride: int = PATCH_STRIDE) -> np.ndarray:
    """Unweighted joint LAB histograms, one L1-normalized row per grid patch."""
    arr = _pixels(img)
    h, w = arr.shape[:2]
    bins = _lab_joint_bins(rgb_to_lab(arr))
    ys, xs = patch_grid_positions(h, w, size, stride)
    ones = np.ones((h, w))
    return _l1_normalize(_patch_histograms(bins, ones, ys, xs, size, COLOR_DIM))


def _sift_at_centers(gray: np.ndarray, cys: np.ndarray, cxs: np.ndarray) -> np.ndarray:
    """128-D descriptors for a row-major (cys x cxs) grid of support centers."""
    h, w = gray.shape
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    frac = (np.arctan2(gy, gx) % (2.0 * np.pi)) / (2.0 * np.pi) * SIFT_ORI_BINS
    b0 = np.floor(frac).astype(np.int64) % SIFT_ORI_BINS
    w1 = frac - np.floor(frac)
    half = SIFT_SUPPORT // 2
    # border-clamped 16x16 support around each center
    rows = np.clip(cys[:, None] + np.arange(-half, half), 0, h - 1)
    cols = np.clip(cxs[:, None] + np.arange(-half, half), 0, w - 1)
    r_idx = rows[:, None, :, None]
    c_idx = cols[None, :, None, :]
    m = mag[r_idx, c_idx]
    bb0 = b0[r_idx, c_idx]
    ww1 = w1[r_idx, c_idx]
    cell = np.arange(SIFT_SUPPORT) // (SIFT_SUPPORT // SIFT_CELLS)
    cell_base = (cell[:, None] * SIFT_CELLS + cell[None, :]) * SIFT_ORI_BINS
    n = len(cys) * len(cxs)
    pix = SIFT_SUPPORT * SIFT_SUPPORT
    base = (cell_base[None, :, :] + np.zeros((n, 1, 1), np.int64)).reshape(n, pix)
    offset = np.arange(n, dtype=np.int64)[:, None] * SIFT_DIM
    bb0 = bb0.reshape(n, pix)
    bb1 = (bb0 + 1) % SIFT_ORI_BINS
    ww1 = ww1.reshape(n, pix)
    m = m.reshape(n, pix)
    hist = np.bincount(
        (base + bb0 + offset).ravel(), weights=(m * (1.0 - ww1)).ravel(),
        minlength=n * SIFT_DIM,
    )
    hist += np.bincount(
        (base + bb1 + offset).ravel(), weights=(m * ww1).ravel(), minlength=n * SIFT_DIM
    )
    desc = hist.reshape(n, SIFT_DIM)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    nonzero = norms[:, 0] > 0
    desc[nonzero] /= norms[nonzero]
    np.minimum(desc, SIFT_CLIP, out=desc)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    desc[nonzero] /= norms[nonzero]
    return desc


def sift_descriptors(img, size: int = PATCH_SIZE, stride: int = PATCH_STRIDE) -> np.ndarray:
    """Dense SIFT over the patch grid: 16x16 support at each patch center,
    4x4 cells x 8 orientation bins, L2-normalized with 0.2 clipping.

    Constant regions give exact zero vectors.
    """
    arr = _pixels(img)
    gray = rgb_to_gray(arr) if arr.ndim == 3 else np.asarray(arr, np.float64)
    ys, xs = patch_grid_positions(gray.shape[0], gray.shape[1], size, stride)
    return _sift_at_centers(gray, ys + size // 2, xs + size // 2)


def whsv_descriptor(img, patch: Patch, weight_map: np.ndarray | None = None) -> Descriptor:
    """Single-patch wHSV histogram (spot-check path, matches the batch rows)."""
    arr = _pixels(img)
    h, w = arr.shape[:2]
    if weight_map is None:
        weight_map = build_weight_map(h, w)
    weight_map = np.asarray(weight_map, dtype=np.float64)
    if weight_map.shape != (h, w):
        raise DimensionMismatchError(
            f"weight map {weight_map.shape} does not match image {(h, w)}"
        )
    sl = (slice(patch.y0, patch.y0 + patch.size), slice(patch.x0, patch.x0 + patch.size))
    bins = _hsv_joint_bins(rgb_to_hsv(arr[sl]))
    hist = np.bincount(bins.ravel(), weights=weight_map[sl].ravel(), minlength=COLOR_DIM)
    return Descriptor(_l1_normalize(hist[None, :])[0], Channel.WHSV, patch.center)


def lab_descriptor(img, patch: Patch) -> Descriptor:
    arr = _pixels(img)
    sl = (slice(patch.y0, patch.y0 + patch.size), slice(patch.x0, patch.x0 + patch.size))
    bins = _lab_joint_bins(rgb_to_lab(arr[sl]))
    hist = np.bincount(bins.ravel(), minlength=COLOR_DIM).astype(np.float64)
    return Descriptor(_l1_normalize(hist[None, :])[0], Channel.LAB, patch.center)


def sift_descriptor(img, patch: Patch) -> Descriptor:
    arr = _pixels(img)
    gray = rgb_to_gray(arr) if arr.ndim == 3 else np.asarray(arr, np.float64)
    cx, cy = patch.center
    values = _sift_at_centers(gray, np.array([cy]), np.array([cx]))[0]
    return Descriptor(values, Channel.SIFT, patch.center)


def hog_descriptor(img, cell: int = HOG_CELL, n_bins: int = HOG_BINS,
                   block: int = HOG_BLOCK, clip: float = HOG_CLIP) -> np.ndarray:
    """Unsigned-gradient HOG: 8x8 cells, 2x2-cell blocks at 1-cell stride,
    per-block L2-hys (clip 0.2). 128x48 input gives 15*5*36 = 2700 values.
    """
    arr = _pixels(img)
    gray = rgb_to_gray(arr) if arr.ndim == 3 else np.asarray(arr, np.float64)
    h, w = gray.shape
    if h % cell or w % cell:
        raise DimensionMismatchError(f"image {h}x{w} not divisible by cell size {cell}")
    cy, cx = h // cell, w // cell
    if cy < block or cx < block:
        raise ImageTooSmallError(f"{cy}x{cx} cells cannot host a {block}x{block} block")
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    # soft vote between the two nearest bin centers (10, 30, ..., 170 degrees)
    frac = ang / (180.0 / n_bins) - 0.5
    f0 = np.floor(frac)
    w1 = frac - f0
    b0 = f0.astype(np.int64) % n_bins
    b1 = (b0 + 1) % n_bins
    rows = np.arange(h)[:, None] // cell
    cols = np.arange(w)[None, :] // cell
    cell_id = rows * cx + cols
    flat0 = cell_id * n_bins + b0
    flat1 = cell_id * n_bins + b1
    total = cy * cx * n_bins
    hist = np.bincount(flat0.ravel(), weights=(mag * (1.0 - w1)).ravel(), minlength=total)
    hist += np.bincount(flat1.ravel(), weights=(mag * w1).ravel(), minlength=total)
    cells = hist.reshape(cy, cx, n_bins)
    blocks = sliding_window_view(cells, (block, block, n_bins))
    nb = (cy - block + 1) * (cx - block + 1)
    vec = blocks.reshape(nb, block * block * n_bins).astype(np.float64)
    norms = np.linalg.norm(vec, axis=1, keepdims=True)
    nz = norms[:, 0] > 0
    vec[nz] /= norms[nz]
    np.minimum(vec, clip, out=vec)
    norms = np.linalg.norm(vec, axis=1, keepdims=True)
    vec[nz] /= norms[nz]
    return vec.ravel()


def hog_length(h: int, w: int, cell: int = HOG_CELL, n_bins: int = HOG_BINS,
               block: int = HOG_BLOCK) -> int:
    cy, cx = h // cell, w // cell
    return (cy - block + 1) * (cx - block + 1) * block * block * n_bins

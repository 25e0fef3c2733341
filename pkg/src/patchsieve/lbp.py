"""Rotation-invariant uniform local binary patterns.

A code for pixel (x, y) thresholds ``neighbors`` circle samples (radius
``radius``, bilinear interpolation) against the center value: sample >=
center gives bit 1. Patterns with at most two circular 0/1 transitions
are "uniform" and coded by their 1-bit count (0..P); everything else
falls into the non-uniform bin P+1, giving P+2 histogram bins.

Exactness notes, load-bearing for the test oracles:

* Circle offsets are generated for the first quadrant only and completed
  by exact sign flips/swaps, so the sample set is closed under 90 degree
  rotation bit-for-bit. libm does not provide this (cos(pi/4) and
  sin(pi/4) differ in the last ulp).
* Bilinear interpolation uses the two-lerp difference form
  v0 + f*(v1 - v0), which returns the pixel value exactly on constant
  neighborhoods. A constant image therefore yields code P everywhere,
  with no dependence on floating-point weight normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import Descriptor, DescriptorKind
from .tiling import Patch, luma


@dataclass
class LbpConfig:
    # (radius, neighbors) per scale; defaults give 26 + 10 = 36 bins
    scales: list[tuple[int, int]] = field(default_factory=lambda: [(3, 24), (1, 8)])
    normalize: bool = True

    def __post_init__(self):
        for radius, neighbors in self.scales:
            if neighbors < 4:
                raise ValueError(f"neighbors must be >= 4, got {neighbors}")
            if radius < 1:
                raise ValueError(f"radius must be >= 1, got {radius}")

    @property
    def dim(self) -> int:
        return sum(p + 2 for _, p in self.scales)


def circle_offsets(radius: float, neighbors: int) -> list[tuple[float, float]]:
    """(dy, dx) sample offsets for angles 2*pi*k/neighbors, k = 0..P-1.

    When 4 divides P the set is built from the first quadrant by exact
    90 degree rotations; offsets within 1e-9 of an integer are snapped so
    on-grid samples are fetched exactly.
    """

    def snap(v: float) -> float:
        r = round(v)
        return float(r) if abs(v - r) < 1e-9 else v

    if neighbors % 4 == 0:
        quarter = neighbors // 4
        base = []
        for j in range(quarter):
            angle = 2.0 * math.pi * j / neighbors
            base.append((snap(radius * math.cos(angle)), snap(radius * math.sin(angle))))
        offsets: list[tuple[float, float]] = []
        for dx, dy in base:  # quadrant 1
            offsets.append((dy, dx))
        for dx, dy in base:  # rotate 90: (dx, dy) -> (-dy, dx)
            offsets.append((dx, -dy))
        for dx, dy in base:  # rotate 180
            offsets.append((-dy, -dx))
        for dx, dy in base:  # rotate 270
            offsets.append((-dx, dy))
        return offsets
    return [
        (
            snap(radius * math.sin(2.0 * math.pi * k / neighbors)),
            snap(radius * math.cos(2.0 * math.pi * k / neighbors)),
        )
        for k in range(neighbors)
    ]


def _margin(radius: float) -> int:
    return int(math.ceil(radius))


def _sample_planes(gray: np.ndarray, radius: float, neighbors: int) -> np.ndarray:
    """Bilinear circle samples for every valid center.

    Returns array (neighbors, H-2m, W-2m) of float64 sample values, m =
    ceil(radius). Samples landing exactly on the margin ring are on-grid
    and carry zero interpolation weight toward the padded row/column.
    """
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape
    m = _margin(radius)
    gp = np.pad(g, ((0, 1), (0, 1)), mode="edge")
    rh, rw = h - 2 * m, w - 2 * m
    planes = np.empty((neighbors, rh, rw), dtype=np.float64)
    for k, (dy, dx) in enumerate(circle_offsets(radius, neighbors)):
        iy, ix = math.floor(dy), math.floor(dx)
        fy, fx = dy - iy, dx - ix
        r0, c0 = m + iy, m + ix
        v00 = gp[r0 : r0 + rh, c0 : c0 + rw]
        v01 = gp[r0 : r0 + rh, c0 + 1 : c0 + 1 + rw]
        v10 = gp[r0 + 1 : r0 + 1 + rh, c0 : c0 + rw]
        v11 = gp[r0 + 1 : r0 + 1 + rh, c0 + 1 : c0 + 1 + rw]
        low = v00 + fx * (v01 - v00)
        high = v10 + fx * (v11 - v10)
        planes[k] = low + fy * (high - low)
    return planes


def _codes_from_bits(bits: np.ndarray, neighbors: int) -> np.ndarray:
    transitions = (bits != np.roll(bits, -1, axis=0)).sum(axis=0)
    ones = bits.sum(axis=0, dtype=np.int64)
    return np.where(transitions <= 2, ones, neighbors + 1)


def lbp_code_plane(gray: np.ndarray, radius: float, neighbors: int) -> np.ndarray:
    """Codes for all valid centers; shape (H-2m, W-2m)."""
    g = np.asarray(gray, dtype=np.float64)
    m = _margin(radius)
    if min(g.shape) <= 2 * radius + 1:
        raise ValueError(
            f"image side {min(g.shape)} too small for radius {radius}; "
            f"minimum side is {int(2 * radius + 2)}"
        )
    planes = _sample_planes(g, radius, neighbors)
    center = g[m : g.shape[0] - m, m : g.shape[1] - m]
    bits = planes >= center[None, :, :]
    return _codes_from_bits(bits, neighbors)


def lbp_code(gray: np.ndarray, x: int, y: int, radius: float, neighbors: int) -> int:
    """Code for a single pixel; x is the column, y the row."""
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape
    m = _margin(radius)
    if not (m <= x <= w - 1 - m and m <= y <= h - 1 - m):
        raise ValueError(
            f"({x}, {y}) closer than {m} pixels to a border of {w}x{h} image"
        )
    gp = np.pad(g, ((0, 1), (0, 1)), mode="edge")
    center = g[y, x]
    bits = np.empty(neighbors, dtype=bool)
    for k, (dy, dx) in enumerate(circle_offsets(radius, neighbors)):
        iy, ix = math.floor(dy), math.floor(dx)
        fy, fx = dy - iy, dx - ix
        r0, c0 = y + iy, x + ix
        low = gp[r0, c0] + fx * (gp[r0, c0 + 1] - gp[r0, c0])
        high = gp[r0 + 1, c0] + fx * (gp[r0 + 1, c0 + 1] - gp[r0 + 1, c0])
        bits[k] = (low + fy * (high - low)) >= center
    transitions = int((bits != np.roll(bits, -1)).sum())
    return int(bits.sum()) if transitions <= 2 else neighbors + 1


def lbp_histogram(
    gray: np.ndarray, radius: float, neighbors: int, normalize: bool = False
) -> np.ndarray:
    """Histogram of codes over all valid interior pixels; length P+2.

    Unnormalized entries are counts summing to (H-2m)(W-2m); normalized
    entries divide by that count.
    """
    codes = lbp_code_plane(gray, radius, neighbors)
    hist = np.bincount(codes.ravel(), minlength=neighbors + 2).astype(np.float64)
    if normalize:
        hist /= codes.size
    return hist


def lbp_descriptor(patch: Patch, cfg: LbpConfig | None = None) -> Descriptor:
    """Two-scale concatenated LBP histogram descriptor for a patch."""
    cfg = cfg or LbpConfig()
    if cfg.dim != 36:
        raise ValueError(
            f"lbp36 descriptors need scales totalling 36 bins, config gives {cfg.dim}"
        )
    gray = luma(patch.pixels)
    parts = [
        lbp_histogram(gray, radius, neighbors, normalize=cfg.normalize)
        for radius, neighbors in cfg.scales
    ]
    return Descriptor(patch.patch_id, DescriptorKind.lbp36, np.concatenate(parts))

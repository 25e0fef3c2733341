"""Scan tiling: split an image into square patches, downsample them, and
drop background-dominated ones.

Pixels are 8-bit; grayscale conversion and box downsampling are done in
exact integer arithmetic (round half up) so outputs are reproducible
bit-for-bit across platforms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .features import make_patch_id
from .ioutil import atomic_write_json

log = logging.getLogger(__name__)


@dataclass
class TilingConfig:
    patch_size: int = 1000
    stride: int = 1000  # == patch_size: no overlap
    downsample_to: int = 250
    bg_threshold: float = 0.99
    bg_brightness_cutoff: int = 200

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not (0 < self.downsample_to <= self.patch_size):
            raise ValueError(
                f"downsample_to must be in (0, patch_size], got {self.downsample_to}"
            )
        if not (0.0 <= self.bg_threshold <= 1.0):
            raise ValueError(f"bg_threshold must be in [0, 1], got {self.bg_threshold}")


@dataclass
class Patch:
    """A square tile cut from a scan, identified by its grid position."""

    scan_id: str
    grid_x: int
    grid_y: int
    pixels: np.ndarray  # side x side [x C] uint8
    side: int
    background_ratio: float | None = field(default=None, compare=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        h, w = self.pixels.shape[:2]
        if h != w or h != self.side:
            raise ValueError(
                f"patch pixels must be square with side {self.side}, got {h}x{w}"
            )
        if self.pixels.ndim == 3 and self.pixels.shape[2] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {self.pixels.shape[2]}")

    @property
    def patch_id(self) -> str:
        return make_patch_id(self.scan_id, self.grid_x, self.grid_y)


def luma(pixels: np.ndarray) -> np.ndarray:
    """Grayscale plane of an image, as uint8.

    RGB uses 0.299 R + 0.587 G + 0.114 B rounded half up, computed in
    integer arithmetic so the result is exactly reproducible.
    """
    a = np.asarray(pixels)
    if a.ndim == 2:
        return a.astype(np.uint8)
    if a.ndim == 3 and a.shape[2] == 1:
        return a[:, :, 0].astype(np.uint8)
    if a.ndim == 3 and a.shape[2] == 3:
        r = a[:, :, 0].astype(np.int64)
        g = a[:, :, 1].astype(np.int64)
        b = a[:, :, 2].astype(np.int64)
        return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)
    raise ValueError(f"unsupported image shape {a.shape}")


def downsample(patch_pixels: np.ndarray, target: int) -> np.ndarray:
    """Reduce a square image to ``target`` pixels per edge.

    When the source side is a multiple of ``target`` this is an exact box
    filter: each output pixel is the integer mean (half up) of its source
    block. Otherwise falls back to bilinear resampling and logs it.
    """
    a = np.asarray(patch_pixels, dtype=np.uint8)
    side = a.shape[0]
    if a.shape[1] != side:
        raise ValueError(f"expected a square image, got {a.shape[0]}x{a.shape[1]}")
    if target == side:
        return a.copy()
    if side % target == 0:
        f = side // target
        if a.ndim == 2:
            blocks = a.reshape(target, f, target, f).astype(np.int64)
            sums = blocks.sum(axis=(1, 3))
        else:
            blocks = a.reshape(target, f, target, f, a.shape[2]).astype(np.int64)
            sums = blocks.sum(axis=(1, 3))
        count = f * f
        return ((sums + count // 2) // count).astype(np.uint8)
    log.warning(
        "downsample: %d does not divide %d, falling back to bilinear", target, side
    )
    mode = "L" if a.ndim == 2 else "RGB"
    img = Image.fromarray(a, mode=mode)
    out = img.resize((target, target), Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


def background_ratio(patch_pixels: np.ndarray, brightness_cutoff: int) -> float:
    """Fraction of pixels whose grayscale value exceeds ``brightness_cutoff``."""
    gray = luma(patch_pixels)
    return float(np.count_nonzero(gray > brightness_cutoff)) / gray.size


def tile_scan(image: np.ndarray, cfg: TilingConfig, scan_id: str = "scan") -> list[Patch]:
    """Cut a scan into downsampled candidate patches.

    Tile origins sit at multiples of ``stride``; tiles extending past the
    image edge are dropped, so with stride == patch_size the count is
    floor(H/stride) * floor(W/stride). Output is ordered by (grid_y, grid_x)
    and every patch carries its post-downsampling background ratio.
    """
    a = np.asarray(image)
    if a.ndim not in (2, 3):
        raise ValueError(f"expected a 2-D raster, got array of ndim {a.ndim}")
    h, w = a.shape[:2]
    ps = cfg.patch_size
    if h < ps or w < ps:
        raise ValueError(
            f"image {w}x{h} is smaller than one {ps}x{ps} patch; nothing to tile"
        )
    patches = []
    for gy, top in enumerate(range(0, h - ps + 1, cfg.stride)):
        for gx, left in enumerate(range(0, w - ps + 1, cfg.stride)):
            tile = a[top : top + ps, left : left + ps]
            pixels = downsample(tile, cfg.downsample_to)
            patches.append(
                Patch(
                    scan_id=scan_id,
                    grid_x=gx,
                    grid_y=gy,
                    pixels=pixels,
                    side=cfg.downsample_to,
                    background_ratio=background_ratio(pixels, cfg.bg_brightness_cutoff),
                )
            )
    return patches


def filter_patches(patches: list[Patch], cfg: TilingConfig) -> list[Patch]:
    """Retain patches whose background ratio does not exceed the threshold."""
    kept = []
    for p in patches:
        ratio = p.background_ratio
        if ratio is None:
            ratio = background_ratio(p.pixels, cfg.bg_brightness_cutoff)
        if ratio <= cfg.bg_threshold:
            kept.append(p)
    return kept


def load_raster(path: str | Path) -> np.ndarray:
    """Load a PNG/TIFF (or any Pillow-readable) image as uint8 gray or RGB."""
    with Image.open(path) as img:
        if img.mode in ("L", "RGB"):
            converted = img
        elif img.mode in ("1", "I;16", "I", "P", "LA"):
            converted = img.convert("L")
        else:
            converted = img.convert("RGB")
        return np.asarray(converted, dtype=np.uint8)


def save_patch_png(patch: Patch, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{patch.patch_id}.png"
    arr = patch.pixels
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")
    return path


def tile_to_directory(
    images: dict[str, np.ndarray],
    cfg: TilingConfig,
    out_dir: str | Path,
    keep_dropped: bool = False,
) -> dict:
    """Tile several scans, write retained patch PNGs plus a manifest.

    Returns the manifest document. The manifest lists every candidate tile
    with its background ratio and retained flag; only retained patches get
    an image file unless keep_dropped is set.
    """
    out_dir = Path(out_dir)
    patches_dir = out_dir / "patches"
    entries = []
    for scan_id in sorted(images):
        candidates = tile_scan(images[scan_id], cfg, scan_id=scan_id)
        retained = {p.patch_id for p in filter_patches(candidates, cfg)}
        for p in candidates:
            keep = p.patch_id in retained
            rel = None
            if keep or keep_dropped:
                save_patch_png(p, patches_dir)
                rel = f"patches/{p.patch_id}.png"
            entries.append(
                {
                    "id": p.patch_id,
                    "scan_id": p.scan_id,
                    "grid_x": p.grid_x,
                    "grid_y": p.grid_y,
                    "background_ratio": p.background_ratio,
                    "retained": keep,
                    "file": rel,
                }
            )
    manifest = {
        "format": "psel-tiles",
        "version": 1,
        "config": {
            "patch_size": cfg.patch_size,
            "stride": cfg.stride,
            "downsample_to": cfg.downsample_to,
            "bg_threshold": cfg.bg_threshold,
            "bg_brightness_cutoff": cfg.bg_brightness_cutoff,
        },
        "patches": entries,
    }
    atomic_write_json(out_dir / "manifest.json", manifest)
    return manifest


def grid_shape(height: int, width: int, cfg: TilingConfig) -> tuple[int, int]:
    """Rows/cols of the candidate grid for an image of the given size."""
    ps, s = cfg.patch_size, cfg.stride
    if height < ps or width < ps:
        return 0, 0
    rows = (height - ps) // s + 1
    cols = (width - ps) // s + 1
    return rows, cols


def expected_tile_count(height: int, width: int, cfg: TilingConfig) -> int:
    rows, cols = grid_shape(height, width, cfg)
    return rows * cols

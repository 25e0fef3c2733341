"""Procedural texture corpus for end-to-end pipeline checks.

Six scans, each a grid of patch-sized texture cells. Textures differ by
scale and waveform (gratings at distinct wavelengths, blob noise at
distinct correlation lengths) so they stay separable under a
rotation-invariant descriptor; per-cell orientation and phase are random.

Each training scan also contains a small share of "contaminant" cells:
blends drawn three-quarters toward the next scan's texture. They carry
the host scan's label but sit in the neighbor's descriptor region, so
they act as retrieval traps that a density-based selector should drop
and a random selector keeps at the nominal rate. A few pure-white cells
per scan exercise background filtering. Query images hold clean cells
only, with ground truth written alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .ioutil import atomic_write_json, atomic_write_text
from .tiling import TilingConfig

# per-scan texture programs: (family, base size parameter)
_TEXTURES: list[tuple[str, float]] = [
    ("grating", 6.0),
    ("grating", 10.0),
    ("grating", 16.0),
    ("grating", 26.0),
    ("blobs", 4.0),
    ("blobs", 10.0),
]

_AMPLITUDE = 52.0
_PIXEL_NOISE = 8.0
_SIZE_JITTER = (0.85, 1.18)

_TRAIN_STREAM = 0
_QUERY_STREAM = 1
_LAYOUT_STREAM = 2


@dataclass
class SyntheticCorpusConfig:
    scans: int = 6
    grid: tuple[int, int] = (23, 23)  # (rows, cols) of training cells
    query_grid: tuple[int, int] = (4, 5)
    patch_size: int = 100
    blend_fraction: float = 0.10
    white_cells: int = 4
    seed: int = 0

    def __post_init__(self):
        if not (2 <= self.scans <= len(_TEXTURES)):
            raise ValueError(f"scans must be in [2, {len(_TEXTURES)}]")
        if self.patch_size < 16:
            raise ValueError("patch_size too small for the texture scales")
        cells = self.grid[0] * self.grid[1]
        if math.ceil(self.blend_fraction * cells) + self.white_cells >= cells:
            raise ValueError("blend and white cells would leave no clean cells")


def recommended_tiling_config(cfg: SyntheticCorpusConfig) -> TilingConfig:
    return TilingConfig(
        patch_size=cfg.patch_size,
        stride=cfg.patch_size,
        downsample_to=cfg.patch_size // 2,
    )


def _texture_field(scan_index: int, side: int, rng: np.random.Generator) -> np.ndarray:
    """One cell's texture as floats in roughly [-1, 1]."""
    family, base = _TEXTURES[scan_index]
    size = base * rng.uniform(*_SIZE_JITTER)
    if family == "grating":
        theta = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
        wave = (xx * math.cos(theta) + yy * math.sin(theta)) * (2.0 * math.pi / size)
        return np.sin(wave + phase)
    noise = rng.standard_normal((side, side))
    field = gaussian_filter(noise, sigma=size / 2.0, mode="wrap")
    std = field.std()
    if std > 0:
        field = field / std
    return np.tanh(1.5 * field)


def _cell_pixels(
    scan_index: int,
    role: str,
    side: int,
    rng: np.random.Generator,
    n_scans: int,
) -> np.ndarray:
    if role == "white":
        return np.full((side, side), 255, dtype=np.uint8)
    field = _texture_field(scan_index, side, rng)
    if role == "blend":
        other = _texture_field((scan_index + 1) % n_scans, side, rng)
        field = 0.25 * field + 0.75 * other
    values = 128.0 + _AMPLITUDE * field
    values = values + rng.uniform(-_PIXEL_NOISE, _PIXEL_NOISE, size=(side, side))
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _cell_rng(
    seed: int, stream: int, scan: int, gy: int, gx: int
) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, scan, gy, gx]))


def _scan_layout(cfg: SyntheticCorpusConfig, scan: int) -> list[str]:
    """Role per cell in row-major order, deterministic from the seed."""
    rows, cols = cfg.grid
    cells = rows * cols
    n_blend = math.ceil(cfg.blend_fraction * cells)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _LAYOUT_STREAM, scan]))
    perm = rng.permutation(cells)
    roles = ["clean"] * cells
    for i in perm[:n_blend]:
        roles[i] = "blend"
    for i in perm[n_blend : n_blend + cfg.white_cells]:
        roles[i] = "white"
    return roles


def _assemble(
    cfg: SyntheticCorpusConfig,
    scan: int,
    grid: tuple[int, int],
    stream: int,
    roles: list[str] | None,
) -> np.ndarray:
    rows, cols = grid
    side = cfg.patch_size
    image = np.empty((rows * side, cols * side), dtype=np.uint8)
    for gy in range(rows):
        for gx in range(cols):
            role = roles[gy * cols + gx] if roles is not None else "clean"
            rng = _cell_rng(cfg.seed, stream, scan, gy, gx)
            cell = _cell_pixels(scan, role, side, rng, cfg.scans)
            image[gy * side : (gy + 1) * side, gx * side : (gx + 1) * side] = cell
    return image


def generate_corpus(cfg: SyntheticCorpusConfig, out_dir: str | Path) -> dict:
    """Write training images, query images, truth CSV, and a summary.

    Layout under ``out_dir``: images/scan<i>.png, queries/q<i>.png,
    truth.csv, corpus.json. Bit-identical for identical configs.
    """
    from PIL import Image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "queries").mkdir(parents=True, exist_ok=True)

    summary_scans = []
    for s in range(cfg.scans):
        roles = _scan_layout(cfg, s)
        image = _assemble(cfg, s, cfg.grid, _TRAIN_STREAM, roles)
        Image.fromarray(image, mode="L").save(out / "images" / f"scan{s}.png")
        summary_scans.append(
            {
                "scan_id": f"scan{s}",
                "cells": len(roles),
                "blend_cells": roles.count("blend"),
                "white_cells": roles.count("white"),
            }
        )

    truth_lines = ["query_id,scan_id"]
    qrows, qcols = cfg.query_grid
    for s in range(cfg.scans):
        image = _assemble(cfg, s, cfg.query_grid, _QUERY_STREAM, None)
        Image.fromarray(image, mode="L").save(out / "queries" / f"q{s}.png")
        for gy in range(qrows):
            for gx in range(qcols):
                truth_lines.append(f"q{s}_x{gx}_y{gy},scan{s}")
    atomic_write_text(out / "truth.csv", "\n".join(truth_lines) + "\n")

    summary = {
        "format": "psel-corpus",
        "version": 1,
        "config": {
            "scans": cfg.scans,
            "grid": list(cfg.grid),
            "query_grid": list(cfg.query_grid),
            "patch_size": cfg.patch_size,
            "blend_fraction": cfg.blend_fraction,
            "white_cells": cfg.white_cells,
            "seed": cfg.seed,
        },
        "scans": summary_scans,
        "queries_per_scan": qrows * qcols,
    }
    atomic_write_json(out / "corpus.json", summary)
    return summary

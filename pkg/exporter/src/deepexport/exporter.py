"""VGG16 penultimate-layer feature export for tiled patch manifests.

Patches listed in a tiles manifest are resized to the network's native
input side with bilinear interpolation, normalized with the standard
per-channel statistics, and pushed through VGG16 truncated after the
second fully connected layer's activation, yielding one 4096-dim vector
per patch. Inference runs in evaluation mode only; with fixed weights
the export is deterministic.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .featurefile import DEEP_DIM, write

MANIFEST_FORMAT = "psel-tiles"
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ExportError(Exception):
    """Base class; exit code 2 at the command line."""


class ManifestError(ExportError):
    """The tiles manifest is malformed or inconsistent."""


class ImageError(ExportError):
    """A patch image is unreadable or disagrees with the manifest."""


@dataclass
class ExportJob:
    manifest: str | Path
    out: str | Path
    batch_size: int = 32
    device: str = "cpu"
    weights: str = "pretrained"  # "pretrained", "random", or a state-dict path
    resize_side: int = 224
    resize_policy: str = "bilinear"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.resize_side < 1:
            raise ValueError(f"resize_side must be >= 1, got {self.resize_side}")
        if self.resize_policy != "bilinear":
            raise ValueError(f"unsupported resize policy {self.resize_policy!r}")


def load_manifest(path: str | Path) -> tuple[list[dict], int | None]:
    """Return the retained patch entries in manifest order, plus the
    patch side the manifest promises (None when absent)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path} is not valid JSON: {exc}")
    if doc.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path} is not a tiles manifest")
    entries = [e for e in doc.get("patches", []) if e.get("retained")]
    if not entries:
        raise ManifestError(f"{path} lists no retained patches")
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate patch ids in manifest")
    for e in entries:
        if not e.get("file"):
            raise ManifestError(f"retained patch {e['id']!r} has no image file")
    side = doc.get("config", {}).get("downsample_to")
    return entries, side


def build_model(weights: str = "pretrained", device: str = "cpu", seed: int = 0):
    """VGG16 truncated after the last hidden activation (4096 outputs)."""
    import torch
    from torchvision import models

    if weights == "pretrained":
        model = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
    elif weights == "random":
        torch.manual_seed(seed)
        model = models.vgg16(weights=None)
    else:
        model = models.vgg16(weights=None)
        state = torch.load(weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    # keep fc6 -> relu -> dropout -> fc7 -> relu; drop the classification layer
    model.classifier = model.classifier[:5]
    model.eval()
    model.requires_grad_(False)
    return model.to(device)


def load_patch(path: str | Path, expected_side: int | None,
               resize_side: int) -> np.ndarray:
    """One patch as a normalized (3, side, side) float32 array."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
    except (OSError, ValueError) as exc:
        raise ImageError(f"cannot read patch image {path}: {exc}")
    if expected_side is not None and rgb.size != (expected_side, expected_side):
        raise ImageError(
            f"{path} is {rgb.size[0]}x{rgb.size[1]}, manifest promises "
            f"{expected_side}x{expected_side}"
        )
    resized = rgb.resize((resize_side, resize_side), Image.BILINEAR)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(IMAGENET_MEAN, np.float32)) / np.asarray(IMAGENET_STD, np.float32)
    return arr.transpose(2, 0, 1)


def export_features(job: ExportJob, model=None) -> tuple[list[str], np.ndarray]:
    """Run the network over every retained patch and write the feature file.

    Ids and row order match the manifest exactly. Returns what was written.
    """
    import torch

    manifest_path = Path(job.manifest)
    entries, side = load_manifest(manifest_path)
    if model is None:
        model = build_model(job.weights, job.device, job.seed)

    ids = [e["id"] for e in entries]
    rows = []
    with torch.no_grad():
        for start in range(0, len(entries), job.batch_size):
            chunk = entries[start : start + job.batch_size]
            arrays = [
                load_patch(manifest_path.parent / e["file"], side, job.resize_side)
                for e in chunk
            ]
            batch = torch.from_numpy(np.stack(arrays)).to(job.device)
            out = model(batch).cpu().numpy().astype(np.float32)
            if out.shape != (len(chunk), DEEP_DIM):
                raise ExportError(
                    f"network emitted shape {out.shape}, expected ({len(chunk)}, {DEEP_DIM})"
                )
            rows.append(out)

    matrix = np.concatenate(rows, axis=0)
    if not np.all(np.isfinite(matrix)):
        raise ExportError("network emitted non-finite activations")
    write(job.out, ids, matrix)
    return ids, matrix

"""Pipeline configuration and seed derivation.

One JSON document drives the whole pipeline: per-stage sections mirror
the stage config dataclasses, plus a single root seed. Stage RNG seeds
are expanded from the root seed by stable text labels, so any stage can
be replayed in isolation. Unknown keys anywhere are hard errors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import InputFormatError
from .lbp import LbpConfig
from .som import SomConfig
from .tiling import TilingConfig

SWEEP_FRACTIONS = (0.10, 0.15, 0.20, 0.30, 0.40, 0.50)
SWEEP_METHODS = ("gmm", "random")


@dataclass
class PcaConfig:
    retained_fraction: float = 0.95

    def __post_init__(self):
        if not (0.0 < self.retained_fraction <= 1.0):
            raise ValueError(
                f"retained_fraction must be in (0, 1], got {self.retained_fraction}"
            )


@dataclass
class SelectionConfig:
    fractions: tuple[float, ...] = SWEEP_FRACTIONS
    methods: tuple[str, ...] = SWEEP_METHODS
    criterion: str = "density"

    def __post_init__(self):
        self.fractions = tuple(self.fractions)
        self.methods = tuple(self.methods)
        for f in self.fractions:
            if not (0.0 < f <= 1.0):
                raise ValueError(f"selection fraction must be in (0, 1], got {f}")
        for m in self.methods:
            if m not in ("gmm", "random"):
                raise ValueError(f"unknown selection method {m!r}")
        if self.criterion not in ("density", "nearest-mean"):
            raise ValueError(f"unknown selection criterion {self.criterion!r}")


@dataclass
class RetrievalConfig:
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass
class EvalConfig:
    """No knobs yet; the section exists so configs stay forward-shaped."""


@dataclass
class PathsConfig:
    images: str | None = None
    tiles: str | None = None
    features: str | None = None
    clusters: str | None = None
    queries: str | None = None
    truth: str | None = None
    work_dir: str | None = None


# som.seed is derived from the root seed, never set in the document
_SECTION_EXCLUDED_KEYS = {"som": {"seed"}}


@dataclass
class PipelineConfig:
    seed: int = 0
    tiling: TilingConfig = field(default_factory=TilingConfig)
    lbp: LbpConfig = field(default_factory=LbpConfig)
    pca: PcaConfig = field(default_factory=PcaConfig)
    som: SomConfig = field(default_factory=SomConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise InputFormatError("config document must be a JSON object")
        sections = {f.name: f for f in fields(cls) if f.name != "seed"}
        unknown = sorted(set(doc) - set(sections) - {"seed"})
        if unknown:
            raise InputFormatError(f"unknown config keys: {unknown}")

        kwargs: dict[str, Any] = {}
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise InputFormatError(f"seed must be an integer, got {seed!r}")
        kwargs["seed"] = seed

        section_types = {
            "tiling": TilingConfig,
            "lbp": LbpConfig,
            "pca": PcaConfig,
            "som": SomConfig,
            "selection": SelectionConfig,
            "retrieval": RetrievalConfig,
            "eval": EvalConfig,
            "paths": PathsConfig,
        }
        for name, typ in section_types.items():
            sub = doc.get(name, {})
            if not isinstance(sub, dict):
                raise InputFormatError(f"config section {name!r} must be an object")
            allowed = {f.name for f in fields(typ)}
            allowed -= _SECTION_EXCLUDED_KEYS.get(name, set())
            bad = sorted(set(sub) - allowed)
            if bad:
                raise InputFormatError(f"unknown keys in config section {name!r}: {bad}")
            if name == "lbp" and "scales" in sub:
                sub = dict(sub)
                sub["scales"] = [tuple(pair) for pair in sub["scales"]]
            try:
                kwargs[name] = typ(**sub)
            except (TypeError, ValueError) as exc:
                raise InputFormatError(f"bad config section {name!r}: {exc}") from exc
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["lbp"]["scales"] = [list(pair) for pair in self.lbp.scales]
        doc["selection"]["fractions"] = list(self.selection.fractions)
        doc["selection"]["methods"] = list(self.selection.methods)
        doc["som"].pop("seed", None)
        return doc


def load_config(path: str | Path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"config is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(doc)


def derive_seed(root_seed: int, label: str) -> int:
    """Stable 64-bit stage seed from the root seed and a text label."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")

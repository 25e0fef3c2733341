"""Deep patch feature exporter.

Reads a tiles manifest describing retained patches, runs each patch
through a truncated VGG16 to get its 4096-dim penultimate activation,
and writes the result as a feature file the companion toolkit can read.
"""

from .exporter import (
    ExportError,
    ExportJob,
    ImageError,
    ManifestError,
    build_model,
    export_features,
    load_manifest,
)
from .featurefile import DEEP4096_KIND, DEEP_DIM

__version__ = "0.1.0"

__all__ = [
    "DEEP4096_KIND",
    "DEEP_DIM",
    "ExportError",
    "ExportJob",
    "ImageError",
    "ManifestError",
    "build_model",
    "export_features",
    "load_manifest",
    "__version__",
]

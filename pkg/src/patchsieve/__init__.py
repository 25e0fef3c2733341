"""patchsieve: compact whole-slide-image representation.

Tile scans into patches, describe each patch with a two-scale uniform
rotation-invariant LBP histogram (or ingest external descriptors),
cluster per scan with an online SOM, keep a representative fraction of
patches via per-cluster Gaussian mixtures, and serve exact Euclidean
retrieval over the retained set. Everything downstream of the root seed
is deterministic and replayable.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, derive_seed, load_config
from .errors import (
    DuplicateIdError,
    InputFormatError,
    MagicMismatchError,
    NumericalError,
    PatchSieveError,
    TruncatedPayloadError,
    UsageError,
    VersionMismatchError,
)
from .evaluation import EvalReport, evaluate, sweep_report
from .features import (
    Descriptor,
    DescriptorKind,
    PcaModel,
    load_pca_model,
    make_patch_id,
    parse_patch_id,
    pca_fit,
    pca_transform,
    read_features,
    save_pca_model,
    write_features,
)
from .gmm import (
    GmmModel,
    SelectionSet,
    gmm_fit,
    mixture_log_density,
    select_gmm,
    select_random,
)
from .lbp import LbpConfig, lbp_code, lbp_descriptor, lbp_histogram
from .retrieval import (
    Match,
    RetrievalIndex,
    build_index,
    load_index,
    query,
    query_batch,
    save_index,
)
from .som import ClusterModel, SomConfig, cluster_scan, som_assign, som_train
from .tiling import Patch, TilingConfig, filter_patches, tile_scan

__all__ = [
    "ClusterModel",
    "Descriptor",
    "DescriptorKind",
    "DuplicateIdError",
    "EvalReport",
    "GmmModel",
    "InputFormatError",
    "LbpConfig",
    "MagicMismatchError",
    "Match",
    "NumericalError",
    "Patch",
    "PatchSieveError",
    "PcaModel",
    "PipelineConfig",
    "RetrievalIndex",
    "SelectionSet",
    "SomConfig",
    "TilingConfig",
    "TruncatedPayloadError",
    "UsageError",
    "VersionMismatchError",
    "build_index",
    "cluster_scan",
    "derive_seed",
    "evaluate",
    "filter_patches",
    "gmm_fit",
    "lbp_code",
    "lbp_descriptor",
    "lbp_histogram",
    "load_config",
    "load_index",
    "load_pca_model",
    "make_patch_id",
    "mixture_log_density",
    "parse_patch_id",
    "pca_fit",
    "pca_transform",
    "query",
    "query_batch",
    "read_features",
    "save_index",
    "save_pca_model",
    "select_gmm",
    "select_random",
    "som_assign",
    "som_train",
    "sweep_report",
    "tile_scan",
    "write_features",
]

"""Checkpoint sparsity toolkit: one-shot magnitude masks, N:M structured
masks, mask analytics, turning-point detection, and pre-training
zero-weight dynamics over a bit-exact tensor-container format."""

from .container import (
    BytesByteSource,
    ByteSource,
    DType,
    FileByteSource,
    TensorContainer,
    TensorMeta,
    container_digest,
    container_from_arrays,
    decode_values,
    encode_values,
    list_tensors,
    open_container,
    serialize_container,
    write_container,
)
from .curves import (
    EssentialSparsityResult,
    SparsityCurve,
    detect_essential,
    drop_curve,
    read_curve,
    write_curve,
)
from .dynamics import (
    CheckpointSeries,
    ZeroCensus,
    census_series,
    detect_abrupt,
    read_series_manifest,
    write_census_csv,
    zero_census,
)
from .errors import (
    ContainerError,
    CurveError,
    DigestMismatchError,
    DynamicsError,
    MaskError,
    ReportError,
    SparsekitError,
)
from .filters import ALL_TENSORS, DEFAULT_PRUNABLE, TensorFilter
from .masks import (
    MaskSet,
    Provenance,
    TensorMask,
    apply_mask,
    apply_mask_to_path,
    cosine_similarity,
    cosine_similarity_per_tensor,
    is_nested,
    read_mask,
    similarity_matrix,
    sparsity,
    write_mask,
)
from .pruning import (
    PruneSpec,
    ThresholdResult,
    imp_schedule,
    nm_prune,
    omp_global,
    omp_per_tensor,
    select_global_threshold,
)
from .report import (
    DEFAULT_COMPONENT_RULES,
    ComponentReport,
    ComponentRow,
    HistogramReport,
    component_report,
    load_component_rules,
    packaged_component_rules,
    weight_histogram,
)
from .synth import synth_container

__version__ = "0.1.0"

"""chainmix: sequence mixing by chained sparse factor matrices.

The mixing matrix is never materialized: it is the product of M sparse
N x N factors whose K entries per row are produced by small MLPs from the
input sequence itself. Applying the chain costs O(M * N * K * d) instead of
the O(N^2 * d) of a dense attention map, and the entries are unconstrained
(no softmax), so mixed rows are free to leave the convex hull of the value
rows.
"""

__version__ = "0.1.0"

from .datagen import (
    DatasetSpec,
    adding_correct,
    gen_adding,
    gen_temporal_order,
)
from .mixer import (
    FactorBank,
    MixerBlockParams,
    apply_block,
    dense_attention_matrix,
    generate_factors,
    init_block,
)
from .network import (
    ModelConfig,
    count_flops_estimate,
    forward,
    forward_batch,
    init_model,
    reference_attention,
)
from .numerics import (
    Tape,
    Var,
    backward,
    load_checkpoint,
    save_checkpoint,
)
from .protocol import (
    LayoutWarning,
    ProtocolKind,
    ProtocolSpec,
    SparseLayout,
    build_layout,
    chord_columns,
    cdil_columns,
    circulant_rank,
    export_layout,
    factor_offsets,
    reachability_complete,
    stored_entries,
)

__all__ = [
    "DatasetSpec",
    "FactorBank",
    "LayoutWarning",
    "MixerBlockParams",
    "ModelConfig",
    "ProtocolKind",
    "ProtocolSpec",
    "SparseLayout",
    "Tape",
    "Var",
    "adding_correct",
    "apply_block",
    "backward",
    "build_layout",
    "chord_columns",
    "cdil_columns",
    "circulant_rank",
    "count_flops_estimate",
    "dense_attention_matrix",
    "export_layout",
    "factor_offsets",
    "forward",
    "forward_batch",
    "gen_adding",
    "gen_temporal_order",
    "generate_factors",
    "init_block",
    "init_model",
    "load_checkpoint",
    "reachability_complete",
    "reference_attention",
    "save_checkpoint",
    "stored_entries",
    "__version__",
]

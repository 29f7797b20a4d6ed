"""Streaming robust Tucker recovery of spatio-temporal traffic tensors."""

from .engine import (
    DegenerateSliceError,
    EngineState,
    Hyperparams,
    SliceResult,
    Variant,
    estimate_slice,
    init,
    reconstruct,
    remove_outliers,
    step,
    update_core,
    update_spatial_factor,
    update_temporal_factor,
)
from .masks import MaskSpec, OutlierSpec, Pattern, gen_mask, inject_outliers
from .metrics import EvalAccumulator, RunReport, outlier_f1, rse, streaming_profile
from .regularizers import (
    Laplacian,
    SpatialGraph,
    build_graph,
    build_laplacian,
    spatial_penalty,
    temporal_penalty,
)
from .streamio import load_checkpoint, read_stream, save_checkpoint, write_report, write_stream
from .synth import SynthSpec, gen_stream
from .tensor import fold, kron, mode_product, pinv, soft_threshold, solve_spd, unfold

__version__ = "0.1.0"

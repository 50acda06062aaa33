"""Linear sketches, row samplers and adaptive sampling over matrix streams."""

from .adaptive import AdaptiveSampler, SampledSubspace, adaptive_finalize, adaptive_runs, batch_adaptive_finalize
from .apps import (
    Schedule,
    SummaryResult,
    projective_cluster_reduce,
    row_subset_select,
    subspace_approx,
    subspace_approx_bicriteria,
    volume_max_turnstile,
)
from .linalg import OrthoBasis, lpq_norm, orthonormal_extend, parallelepiped_volume, residual
from .randomness import HashFamily, derive_seed, parse_seed
from .rowarrival import (
    UnsupportedDimension,
    coreset_stream,
    eps_kernel,
    greedy_volume_max,
    hull_vertices,
    jl_embed,
    volume_max_row_arrival,
)
from .samplers import FAIL, SAMPLE, LpSamplerStack, SampleOutcome, SamplerConfig, multi_sample
from .sketches import AmsM, CountSketchM, EstimatorM, SketchMismatch, from_bytes, merge, to_bytes
from .streams import Stream, StreamParseError, TurnstileUpdate, parse_stream, read_stream

__version__ = "0.1.0"

from __future__ import annotations

from .errors import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    NumericError,
    ParseError,
    SamplingError,
    UnknownUserError,
    VocabularyError,
)
from .gradcheck import finite_difference_check, gradient_errors
from .rng import component_rng
from .tensor import (
    GradientTape,
    Tensor,
    backward,
    broadcast_rows,
    concat,
    gather_rows,
    matmul,
    reduce_sum,
    relu,
    reshape,
    segment_sum,
    softmax,
    transpose,
)
from .utils import Numeric

__all__ = [
    "backward",
    "broadcast_rows",
    "CheckpointCorruptionError",
    "CheckpointFormatError",
    "component_rng",
    "concat",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "finite_difference_check",
    "gather_rows",
    "gradient_errors",
    "GradientTape",
    "matmul",
    "Numeric",
    "NumericError",
    "ParseError",
    "reduce_sum",
    "relu",
    "reshape",
    "SamplingError",
    "segment_sum",
    "softmax",
    "Tensor",
    "transpose",
    "UnknownUserError",
    "VocabularyError",
]

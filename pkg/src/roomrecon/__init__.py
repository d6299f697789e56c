"""Synthetic room capture, frame reduction and sparse reconstruction."""

from .errors import (DegenerateGeometry, DegenerateInput, InsufficientData, InvalidArgument, LowParallax,
                     NegativeDepth, PipelineError, ReconstructionFailed)

__version__ = "0.1.0"

__all__ = [
    "DegenerateGeometry",
    "DegenerateInput",
    "InsufficientData",
    "InvalidArgument",
    "LowParallax",
    "NegativeDepth",
    "PipelineError",
    "ReconstructionFailed",
]

"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class PipelineError(Exception):
    code = "pipeline-error"


class InvalidArgument(PipelineError, ValueError):
    code = "invalid-argument"


class InsufficientData(PipelineError):
    code = "insufficient-data"


class DegenerateGeometry(PipelineError):
    code = "degenerate-geometry"


class LowParallax(PipelineError):
    code = "low-parallax"


class NegativeDepth(PipelineError):
    code = "negative-depth"


class ReconstructionFailed(PipelineError):
    code = "reconstruction-failed"


class DegenerateInput(PipelineError):
    code = "degenerate-input"

"""Exception hierarchy shared by all pipeline stages.

Two top-level families map onto CLI exit codes: ``InputError`` (exit 1)
covers bad files, parameters, and contract mismatches; ``PipelineError``
(exit 2) covers runtime failures of an otherwise well-formed run.
"""


class IndoorSegError(Exception):
    """Base class for all package errors."""


class InputError(IndoorSegError):
    """Bad user input: files, parameters, format/contract mismatches."""


class PipelineError(IndoorSegError):
    """A pipeline stage failed on otherwise valid input."""


class PlyParseError(InputError):
    """Malformed PLY file. Carries the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyCloudError(PipelineError):
    """Ingestion produced no valid points."""


class FrameDiscardError(PipelineError):
    """Frame rejected: not enough floor points to recover the ground plane."""


class GenerationError(PipelineError):
    """Synthetic scene generation could not place the requested furniture."""


class TrainingError(InputError):
    """Forest training received unusable data."""


class ModelFormatError(InputError):
    """Model file is corrupt, truncated, or has an incompatible version."""


class PredictionError(InputError):
    """Feature vector violates the model's feature contract."""


class FeatureError(PipelineError):
    """Patch too small or otherwise unusable for feature extraction."""


class EvaluationError(PipelineError):
    """Evaluation could not produce a report (e.g. every frame discarded)."""

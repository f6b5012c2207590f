"""Exception hierarchy shared by every module."""


class AMRFError(Exception):
    """Base class for all toolkit errors."""


class DecodeError(AMRFError):
    pass


class NonBinaryValues(DecodeError):
    pass


class DimensionMismatch(AMRFError, ValueError):
    pass


class EmptyMask(AMRFError, ValueError):
    pass


class ValueOutOfRange(AMRFError, ValueError):
    pass


class NoRegionFound(AMRFError):
    pass


class EmptyTrainingSet(AMRFError, ValueError):
    pass


class MaskNotFound(AMRFError, FileNotFoundError):
    pass


class EmptyCrop(AMRFError, ValueError):
    pass


class SingleClassTrainingSet(AMRFError, ValueError):
    pass


class StaleVerdicts(AMRFError):
    pass


class ConfigError(AMRFError, ValueError):
    pass


class PipelineError(AMRFError):
    """Wraps a failure with the sample id or iteration it happened in."""

    def __init__(self, message, sample_id=None, iteration=None):
        super().__init__(message)
        self.sample_id = sample_id
        self.iteration = iteration

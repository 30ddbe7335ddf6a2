"""Exception hierarchy.

Every error raised by the package derives from :class:`SplatError`. The CLI
maps each family onto its own exit code via :attr:`SplatError.exit_code`.
"""


class SplatError(Exception):
    exit_code = 1


class InvalidParameterError(SplatError, ValueError):
    pass


class ProjectionError(SplatError, ValueError):
    pass


class OracleLimitError(SplatError):
    pass


class ConfigError(SplatError, ValueError):
    exit_code = 2


class ParseError(SplatError):
    exit_code = 3

    def __init__(self, message, *, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedCameraModelError(ParseError):
    pass


class MissingMaskError(SplatError):
    pass


class NumericalError(SplatError, ArithmeticError):
    exit_code = 4


class DatasetError(SplatError):
    pass


class EmptyCloudError(SplatError):
    pass


class SegmentationError(SplatError):
    pass


class EstimationError(SplatError):
    pass


class PipelineStageError(SplatError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    exit_code = 5

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause

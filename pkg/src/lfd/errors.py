"""Exception hierarchy.

Everything raised deliberately by the package derives from :class:`LFDError`;
the CLI maps these to exit code 2 (data error).
"""


class LFDError(Exception):
    pass


class ParseError(LFDError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class MeshIndexError(LFDError, IndexError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class DegenerateMeshError(LFDError):
    pass


class GenerationError(LFDError):
    pass


class ArgumentError(LFDError, ValueError):
    pass


class BehindCameraError(LFDError):
    pass


class DomainError(LFDError):
    pass


class ShapeError(LFDError):
    pass


class ConfigurationError(LFDError):
    pass


class DatasetError(LFDError):
    pass


class InsufficientDataError(LFDError):
    pass


class DegenerateConfigurationError(LFDError):
    pass


class NoConsensusError(LFDError):
    pass


class EvaluationError(LFDError):
    pass


class FormatError(LFDError):
    pass

"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class RoadRegError(Exception):
    """Base class for every error raised by roadreg."""


class InvalidInput(RoadRegError, ValueError):
    """Input violates a documented precondition."""


class NoLabels(InvalidInput):
    pass


class EmptyResult(RoadRegError):
    pass


class EmptyCloud(InvalidInput):
    pass


class TooFewPoints(InvalidInput):
    pass


class AllFiltered(EmptyResult):
    pass


class EmptyImage(InvalidInput):
    pass


class DegeneratePair(InvalidInput):
    pass


class InsufficientKeypoints(InvalidInput):
    pass


class NoViableCandidate(RoadRegError):
    pass


class NoPairs(EmptyResult):
    pass


class SingularSystem(RoadRegError):
    pass


class NoGroundFound(RoadRegError):
    pass


class NoOverlap(RoadRegError):
    pass


class DegenerateSegment(InvalidInput):
    pass


class EmptyInput(InvalidInput):
    pass


class TooFewSamples(InvalidInput):
    pass


class NoMatches(EmptyResult):
    pass


class ZeroVariance(InvalidInput):
    pass


class InvalidSpec(InvalidInput):
    pass


class ParseError(RoadRegError):
    """Malformed file content. ``offset`` is a line number (text) or byte offset (binary)."""

    def __init__(self, message: str, offset: int | None = None, unit: str = "byte"):
        self.offset = offset
        self.unit = unit
        if offset is not None:
            message = f"{message} (at {unit} {offset})"
        super().__init__(message)


class MissingProperty(ParseError):
    pass


class UnsupportedFormat(RoadRegError):
    pass


class ConfigError(RoadRegError):
    pass


class StageError(RoadRegError):
    """Wraps any failure inside a pipeline stage, keeping the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")

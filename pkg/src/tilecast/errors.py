"""Exception hierarchy.

Every error carries a stable ``code`` (the class name); the CLI prints it next
to the human-readable message so scripts can match on it.
"""

from __future__ import annotations


class TilecastError(Exception):
    code = "TilecastError"

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        cls.code = cls.__name__

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        out = {"code": self.code, "message": str(self)}
        if self.details:
            out["details"] = self.details
        return out


# access patterns and tilers
class PatternError(TilecastError, ValueError): ...
class DimensionMismatch(PatternError): ...
class OutOfBounds(PatternError): ...
class EmptyDims(PatternError): ...
class RankOverflow(PatternError): ...
class MismatchedDims(PatternError): ...
class EmptySequence(PatternError): ...
class UnsupportedRank(PatternError): ...
class NonDivisible(PatternError): ...


# device model
class InvalidProfile(TilecastError, ValueError): ...
class OutOfGrid(TilecastError, IndexError): ...


# design construction
class DesignError(TilecastError, ValueError): ...
class InvalidDepth(DesignError): ...
class DuplicateName(DesignError): ...
class RoleMismatch(DesignError): ...
class ShapeMismatch(DesignError): ...
class NonMultiple(DesignError): ...
class HandleAlreadyBound(DesignError): ...
class KindMismatch(DesignError): ...
class AlreadyPlaced(DesignError): ...


# object fifo access inside core bodies
class AccessError(TilecastError, RuntimeError): ...
class ExceedsDepth(AccessError): ...
class ReleaseUnderflow(AccessError): ...
class OutsideCoreBody(AccessError): ...


# resolve_program
class ResolutionError(TilecastError): ...
class Unplaced(ResolutionError): ...
class ResourceExhausted(ResolutionError): ...
class DmaViolation(ResolutionError): ...
class DanglingEndpoint(ResolutionError): ...
class NoCompletion(ResolutionError): ...
class GridExhausted(ResolutionError): ...
class UnknownKernel(ResolutionError): ...


# kernels and simulation
class DuplicateKernel(TilecastError, ValueError): ...
class SimulationError(TilecastError, RuntimeError): ...
class Deadlock(SimulationError): ...
class UnsupportedOp(SimulationError): ...


class ParseError(TilecastError, ValueError): ...
class ManifestError(TilecastError, ValueError): ...

"""Exception types shared across the package."""

from __future__ import annotations

from dataclasses import dataclass


class CBILabError(Exception):
    """Base class for all package errors."""


# validation issues -- 1-based indices, matching the usual matrix notation


@dataclass(frozen=True)
class NegativeOffDiagonal:
    i: int
    j: int

    def __str__(self):
        return f"NegativeOffDiagonal({self.i},{self.j})"


@dataclass(frozen=True)
class NegativeParameter:
    name: str
    index: int

    def __str__(self):
        return f"NegativeParameter({self.name},{self.index})"


@dataclass(frozen=True)
class AtomOutsideUd:
    measure: str
    index: int

    def __str__(self):
        return f"AtomOutsideUd({self.measure},{self.index})"


@dataclass(frozen=True)
class NonpositiveWeight:
    measure: str
    index: int

    def __str__(self):
        return f"NonpositiveWeight({self.measure},{self.index})"


@dataclass(frozen=True)
class ShapeMismatch:
    name: str
    expected: str

    def __str__(self):
        return f"ShapeMismatch({self.name}, expected {self.expected})"


class ValidationError(CBILabError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class ParseError(CBILabError):
    pass


class NotEssentiallyNonnegative(CBILabError):
    pass


class NotIrreducible(CBILabError):
    pass


class EigenSolverFailure(CBILabError):
    pass


class NonFinite(CBILabError):
    pass


class QuadratureFailure(CBILabError):
    pass


class NotSymmetric(CBILabError):
    pass


class NegativeEigenvalue(CBILabError):
    pass


class NotCritical(CBILabError):
    pass


class SingularBtilde(CBILabError):
    pass


class StepTooLarge(CBILabError):
    pass


class GridMismatch(CBILabError):
    pass


class LengthMismatch(CBILabError):
    pass


class HorizonTooShort(CBILabError):
    pass


class EmptySample(CBILabError):
    pass


class AllZeroMass(CBILabError):
    pass

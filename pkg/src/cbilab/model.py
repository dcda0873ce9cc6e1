"""CBI parameter sets with finite-atom jump measures.

A model is the tuple ``(d, c, beta, B, nu, mu_1..mu_d)`` together with the
mean of the (deterministic) starting point.  Jump measures are finite lists
of weighted atoms in ``R_+^d \\ {0}``, so every integral against them is a
finite sum.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AtomOutsideUd,
    NegativeOffDiagonal,
    NegativeParameter,
    NonpositiveWeight,
    ParseError,
    ShapeMismatch,
    ValidationError,
)

#: entries in [-CLAMP_TOL, 0) are treated as serialization noise and set to 0
CLAMP_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class AtomMeasure:
    """Finite measure ``sum_k w_k delta_{z_k}`` on ``R_+^d``.

    ``points`` has shape ``(k, d)`` and ``weights`` shape ``(k,)``; ``k = 0``
    is the zero measure.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 0)
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def zero(cls, d: int) -> "AtomMeasure":
        return cls(np.zeros((0, d)), np.zeros(0))

    @classmethod
    def from_atoms(cls, atoms, d: int) -> "AtomMeasure":
        """Build from an iterable of ``(point, weight)`` pairs."""
        atoms = list(atoms)
        if not atoms:
            return cls.zero(d)
        pts = np.array([np.asarray(p, dtype=float).reshape(-1) for p, _ in atoms])
        w = np.array([float(wt) for _, wt in atoms])
        return cls(pts, w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def integrate(self, f) -> np.ndarray:
        """``sum_k w_k f(z_k)`` for a function ``f`` of a single point."""
        if len(self) == 0:
            return np.asarray(0.0)
        vals = np.array([f(z) for z in self.points])
        return np.tensordot(self.weights, vals, axes=1)

    def first_moment(self) -> np.ndarray:
        """``int z mu(dz)``."""
        if len(self) == 0:
            return np.zeros(self.dim)
        return self.weights @ self.points

    def second_moment(self) -> np.ndarray:
        """``int z z^T mu(dz)``."""
        if len(self) == 0:
            return np.zeros((self.dim, self.dim))
        return np.einsum("k,ki,kj->ij", self.weights, self.points, self.points)

    def tail_moment(self, q: float) -> float:
        """``int ||z||^q 1{||z|| >= 1} mu(dz)``."""
        norms = np.linalg.norm(self.points, axis=1)
        big = norms >= 1.0
        return float(np.sum(self.weights[big] * norms[big] ** q))

    def split_second_moment(self) -> tuple[float, float]:
        """``int ||z||^2 dmu`` split into the parts ``||z|| < 1`` and ``>= 1``."""
        norms = np.linalg.norm(self.points, axis=1)
        small = norms < 1.0
        return (float(np.sum(self.weights[small] * norms[small] ** 2)),
                float(np.sum(self.weights[~small] * norms[~small] ** 2)))

    def to_list(self) -> list[dict]:
        return [{"point": [float(x) for x in p], "weight": float(w)}
                for p, w in zip(self.points, self.weights)]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Raw (unchecked) CBI parameter set."""

    d: int
    c: np.ndarray
    beta: np.ndarray
    B: np.ndarray
    nu: AtomMeasure
    mu: tuple
    x0_mean: np.ndarray = None
    comment: str = ""

    def __post_init__(self):
        object.__setattr__(self, "c", _frozen(np.asarray(self.c, dtype=float).reshape(-1)))
        object.__setattr__(self, "beta", _frozen(np.asarray(self.beta, dtype=float).reshape(-1)))
        object.__setattr__(self, "B", _frozen(np.atleast_2d(np.asarray(self.B, dtype=float))))
        x0 = np.zeros(self.d) if self.x0_mean is None else self.x0_mean
        object.__setattr__(self, "x0_mean", _frozen(np.asarray(x0, dtype=float).reshape(-1)))
        object.__setattr__(self, "mu", tuple(self.mu))

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelSpec":
        """Build from the JSON model document (see README for the schema)."""
        try:
            d = int(doc["d"])
        except KeyError:
            raise ParseError("missing field 'd'") from None
        except (TypeError, ValueError):
            raise ParseError(f"field 'd': expected an integer, got {doc['d']!r}") from None

        def arr(name, default):
            try:
                return np.asarray(doc.get(name, default), dtype=float)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"field '{name}': {exc}") from None

        def measure(name, atoms):
            try:
                return AtomMeasure.from_atoms(
                    ((a["point"], a["weight"]) for a in atoms), d)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"field '{name}': bad atom list ({exc!r})") from None

        mu_doc = doc.get("mu") or [[] for _ in range(d)]
        if len(mu_doc) != d:
            raise ParseError(f"field 'mu': expected {d} atom lists, got {len(mu_doc)}")
        return cls(
            d=d,
            c=arr("c", np.zeros(d)),
            beta=arr("beta", np.zeros(d)),
            B=arr("B", np.zeros((d, d))),
            nu=measure("nu", doc.get("nu") or []),
            mu=tuple(measure(f"mu[{k}]", m) for k, m in enumerate(mu_doc)),
            x0_mean=arr("x0_mean", np.zeros(d)),
            comment=str(doc.get("comment", "")),
        )

    def to_dict(self) -> dict:
        doc = {
            "d": self.d,
            "c": self.c.tolist(),
            "beta": self.beta.tolist(),
            "B": self.B.tolist(),
            "nu": self.nu.to_list(),
            "mu": [m.to_list() for m in self.mu],
            "x0_mean": self.x0_mean.tolist(),
        }
        if self.comment:
            doc["comment"] = self.comment
        return doc


class ValidatedModel(ModelSpec):
    """A :class:`ModelSpec` that passed :func:`validate`.  Immutable."""


def _clamp(x: np.ndarray, name: str) -> np.ndarray:
    noisy = (x < 0) & (x >= -CLAMP_TOL)
    if noisy.any():
        warnings.warn(f"{name}: clamping {int(noisy.sum())} entries in "
                      f"[-{CLAMP_TOL:g}, 0) to 0", stacklevel=3)
        x = np.where(noisy, 0.0, x)
    return x


def _check_measure(m: AtomMeasure, name: str, d: int, issues: list) -> AtomMeasure:
    if len(m) == 0:
        return AtomMeasure.zero(d)
    if m.points.shape[1] != d:
        issues.append(ShapeMismatch(name, f"points of dimension {d}"))
        return m
    pts = _clamp(np.array(m.points), name)
    for k, (p, w) in enumerate(zip(pts, m.weights)):
        if (p < 0).any() or not (p > 0).any() or not np.isfinite(p).all():
            issues.append(AtomOutsideUd(name, k + 1))
        if not w > 0:
            issues.append(NonpositiveWeight(name, k + 1))
    return AtomMeasure(pts, m.weights)


def validate(spec: ModelSpec) -> ValidatedModel:
    """Check admissibility and return an immutable validated copy.

    Raises :class:`ValidationError` carrying every violated invariant.
    Validating an already validated model returns it unchanged.
    """
    if isinstance(spec, ValidatedModel):
        return spec
    d = spec.d
    issues = []
    if d < 1:
        raise ValidationError([ShapeMismatch("d", "a positive integer")])
    for name, arr, shape in (("c", spec.c, (d,)), ("beta", spec.beta, (d,)),
                             ("B", spec.B, (d, d)), ("x0_mean", spec.x0_mean, (d,))):
        if arr.shape != shape:
            issues.append(ShapeMismatch(name, f"shape {shape}"))
    if len(spec.mu) != d:
        issues.append(ShapeMismatch("mu", f"{d} measures"))
    if issues:
        raise ValidationError(issues)

    c = _clamp(np.array(spec.c), "c")
    beta = _clamp(np.array(spec.beta), "beta")
    x0 = _clamp(np.array(spec.x0_mean), "x0_mean")
    for name, vec in (("c", c), ("beta", beta), ("x0_mean", x0)):
        for i, x in enumerate(vec):
            if not (x >= 0 and math.isfinite(x)):
                issues.append(NegativeParameter(name, i + 1))

    B = np.array(spec.B)
    off = ~np.eye(d, dtype=bool)
    B[off] = _clamp(B[off], "B")
    if not np.isfinite(B).all():
        issues.append(NegativeParameter("B", 0))
    for i in range(d):
        for j in range(d):
            if i != j and B[i, j] < 0:
                issues.append(NegativeOffDiagonal(i + 1, j + 1))

    nu = _check_measure(spec.nu, "nu", d, issues)
    mu = tuple(_check_measure(m, f"mu{k + 1}", d, issues) for k, m in enumerate(spec.mu))
    if issues:
        raise ValidationError(issues)
    return ValidatedModel(d=d, c=c, beta=beta, B=B, nu=nu, mu=mu,
                          x0_mean=x0, comment=spec.comment)


def load_model(path) -> ValidatedModel:
    """Parse and validate a JSON model file."""
    return validate(parse_model(path))


def parse_model(path) -> ModelSpec:
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return ModelSpec.from_dict(doc)


def moment_integrals(spec: ModelSpec, q: float) -> dict:
    """``int ||z||^q 1{||z||>=1}`` against ``nu`` and each ``mu_i``."""
    return {"nu": spec.nu.tail_moment(q), "mu": [m.tail_moment(q) for m in spec.mu]}


def check_moment_condition(spec: ModelSpec, q: int) -> bool:
    """True iff all order-``q`` tail moments of the jump measures are finite."""
    if q < 1:
        raise ValueError("q must be a positive integer")
    vals = moment_integrals(validate(spec), q)
    return math.isfinite(vals["nu"]) and all(math.isfinite(v) for v in vals["mu"])


@dataclass(frozen=True)
class MomentOrder:
    q: int
    verified: bool
    integrals: dict = field(default_factory=dict, compare=False)


def moment_order(spec: ModelSpec, q: int) -> MomentOrder:
    return MomentOrder(q, check_moment_condition(spec, q), moment_integrals(spec, q))

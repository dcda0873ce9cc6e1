"""First moments, classification and long-time mean behaviour."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .coefficients import CRITICAL_TOL, effective_branching, immigration_mean
from .errors import NonFinite, NotIrreducible, SingularBtilde
from .model import ModelSpec, validate
from .spectral import is_irreducible, perron


class Regime(str, enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class Classification:
    regime: Regime
    s: float


def classify_matrix(Btilde) -> Classification:
    if not is_irreducible(Btilde):
        raise NotIrreducible("classification needs an irreducible Btilde")
    s = perron(Btilde).s
    if abs(s) < CRITICAL_TOL:
        return Classification(Regime.CRITICAL, s)
    return Classification(Regime.SUBCRITICAL if s < 0 else Regime.SUPERCRITICAL, s)


def classify(spec: ModelSpec) -> Classification:
    return classify_matrix(effective_branching(spec))


def integrated_semigroup(Btilde, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(exp(t B), int_0^t exp(u B) du)``.

    Both blocks come from one exponential of the augmented matrix
    ``[[B, I], [0, 0]]``, which needs no invertibility of ``B``.
    """
    B = np.asarray(Btilde, float)
    d = B.shape[0]
    aug = np.zeros((2 * d, 2 * d))
    aug[:d, :d] = B
    aug[:d, d:] = np.eye(d)
    E = scipy.linalg.expm(t * aug)
    if not np.isfinite(E).all():
        raise NonFinite(f"integrated semigroup overflow at t = {t}")
    return E[:d, :d], E[:d, d:]


def mean_at(spec: ModelSpec, t: float, x0=None) -> np.ndarray:
    """``E(X_t) = exp(t B~) E(X_0) + (int_0^t exp(u B~) du) beta~``."""
    spec = validate(spec)
    if t < 0:
        raise ValueError("t must be non-negative")
    x0 = spec.x0_mean if x0 is None else np.asarray(x0, float)
    Et, It = integrated_semigroup(effective_branching(spec), t)
    return np.maximum(Et @ x0 + It @ immigration_mean(spec), 0.0)


def mean_path(spec: ModelSpec, times) -> np.ndarray:
    return np.array([mean_at(spec, float(t)) for t in times])


@dataclass(frozen=True, eq=False)
class MeanAsymptote:
    regime: Regime
    limit_vector: np.ndarray
    #: "none", "divide-by-t" or "multiply-by-e^{-st}"
    normalization: str


def mean_asymptote(spec: ModelSpec) -> MeanAsymptote:
    """Limit of ``E(X_t)`` under the regime's natural normalisation."""
    spec = validate(spec)
    Bt = effective_branching(spec)
    bt = immigration_mean(spec)
    cls = classify_matrix(Bt)
    summ = perron(Bt)
    if cls.regime is Regime.SUBCRITICAL:
        if np.linalg.cond(Bt) > 1e12:
            raise SingularBtilde("subcritical Btilde is numerically singular")
        return MeanAsymptote(cls.regime, -np.linalg.solve(Bt, bt), "none")
    if cls.regime is Regime.CRITICAL:
        return MeanAsymptote(cls.regime, summ.Pi @ bt, "divide-by-t")
    lim = summ.Pi @ spec.x0_mean + summ.Pi @ bt / summ.s
    return MeanAsymptote(cls.regime, lim, "multiply-by-e^{-st}")

"""Derived coefficients of a CBI model and of its diffusion limit.

Notation follows the usual one for multi-type CBI processes:

* ``Btilde``   effective branching matrix, ``b_ij + int (z_i - delta_ij)^+ mu_j(dz)``
* ``betatilde`` effective immigration mean, ``beta + int z nu(dz)``
* ``Ck``       branching covariances, ``2 c_k e_k e_k^T + int z z^T mu_k(dz)``
* ``Cbar``     ``sum_k u_k C_k`` with ``u`` the right Perron vector of ``Btilde``
* ``betatilde2`` ``(int_0^1 exp(s Btilde) ds) betatilde``, i.e. ``E(X_1)`` from ``X_0 = 0``
* ``Ctilde``   ``sum_k int_0^1 (e_k^T exp((1-s)Btilde) u) exp(s Btilde) C_k exp(s Btilde)^T ds``
* ``V``        the immigration part of the one-step conditional variance

and the limit SDE ``dX = a dt + sqrt(b X^+) dW`` has ``a = <v, betatilde>``,
``b = <Cbar v, v>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NegativeEigenvalue, NotCritical, NotSymmetric, QuadratureFailure
from .model import ModelSpec, validate
from .spectral import SpectralSummary, perron

#: Gauss-Legendre order used for every integral over [0, 1]
GL_NODES = 64
CRITICAL_TOL = 1e-9
PSD_TOL = 1e-8


def gauss_legendre(n: int = GL_NODES, a: float = 0.0, b: float = 1.0):
    """Nodes and weights of the ``n``-point Gauss-Legendre rule on ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _expm_at(Bt: np.ndarray, nodes) -> np.ndarray:
    E = np.array([scipy.linalg.expm(s * Bt) for s in nodes])
    if not np.isfinite(E).all():
        raise QuadratureFailure("non-finite matrix exponential at a quadrature node")
    return E


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def effective_branching(spec: ModelSpec) -> np.ndarray:
    spec = validate(spec)
    d = spec.d
    Bt = np.array(spec.B)
    for j, m in enumerate(spec.mu):
        for z, w in zip(m.points, m.weights):
            shift = np.zeros(d)
            shift[j] = 1.0
            Bt[:, j] += w * np.maximum(z - shift, 0.0)
    return Bt


def immigration_mean(spec: ModelSpec) -> np.ndarray:
    spec = validate(spec)
    return spec.beta + spec.nu.first_moment()


def branching_covariances(spec: ModelSpec) -> list[np.ndarray]:
    spec = validate(spec)
    out = []
    for k, m in enumerate(spec.mu):
        C = m.second_moment()
        C[k, k] += 2.0 * spec.c[k]
        out.append(C)
    return out


def aggregate_covariance(Ck, u) -> np.ndarray:
    return _sym(sum(float(uk) * C for uk, C in zip(u, Ck)))


def unit_time_drift(spec: ModelSpec, Btilde, betatilde) -> np.ndarray:
    """``(int_0^1 exp(s Btilde) ds) betatilde`` by 64-node Gauss-Legendre."""
    s, w = gauss_legendre()
    E = _expm_at(np.asarray(Btilde, float), s)
    out = np.einsum("n,nij,j->i", w, E, np.asarray(betatilde, float))
    return np.maximum(out, 0.0)


def _require_critical(Btilde, summary: SpectralSummary | None):
    summary = summary or perron(Btilde)
    if abs(summary.s) >= CRITICAL_TOL:
        raise NotCritical(f"s(Btilde) = {summary.s:.3g} is outside the critical band")
    return summary


def integrated_covariance(spec: ModelSpec, Btilde, Ck, u, summary=None) -> np.ndarray:
    """``Ctilde``; defined for critical models only."""
    Btilde = np.asarray(Btilde, float)
    _require_critical(Btilde, summary)
    s, w = gauss_legendre()
    E = _expm_at(Btilde, s)
    Erev = _expm_at(Btilde, 1.0 - s)
    u = np.asarray(u, float)
    d = len(u)
    out = np.zeros((d, d))
    for n in range(len(s)):
        scal = Erev[n] @ u
        inner = sum(scal[k] * Ck[k] for k in range(d))
        out += w[n] * E[n] @ inner @ E[n].T
    return _sym(out)


def noise_matrix_V(spec: ModelSpec, Btilde, betatilde, Ck) -> np.ndarray:
    """Immigration contribution to ``Var(X_1 | X_0 = x)``.

    ``V = int_0^1 e^{uB} N e^{uB^T} du
    + sum_k int_0^1 (int_0^{1-u} e_k^T e^{vB} betatilde dv) e^{uB} C_k e^{uB^T} du``
    with ``N = int z z^T nu(dz)``; the inner integral uses a 64-node rule on
    ``[0, 1-u]`` at every outer node.
    """
    spec = validate(spec)
    Btilde = np.asarray(Btilde, float)
    betatilde = np.asarray(betatilde, float)
    d = spec.d
    N = spec.nu.second_moment()
    s, w = gauss_legendre()
    E = _expm_at(Btilde, s)
    x, wx = gauss_legendre()
    out = np.zeros((d, d))
    for n, un in enumerate(s):
        inner_nodes = (1.0 - un) * x
        Ein = _expm_at(Btilde, inner_nodes)
        mass = (1.0 - un) * np.einsum("m,mij,j->i", wx, Ein, betatilde)
        M = N + sum(mass[k] * Ck[k] for k in range(d))
        out += w[n] * E[n] @ M @ E[n].T
    return _sym(out)


def limit_sde_coefficients(betatilde, Cbar, v) -> tuple[float, float]:
    v = np.asarray(v, float)
    a = float(v @ np.asarray(betatilde, float))
    b = float(v @ np.asarray(Cbar, float) @ v)
    return max(a, 0.0), max(b, 0.0)


def psd_sqrt(M) -> np.ndarray:
    """Symmetric positive semidefinite square root.

    Eigenvalues in ``[-1e-8, 0)`` are treated as zero.
    """
    M = np.asarray(M, float)
    if not np.allclose(M, M.T, atol=1e-10, rtol=0):
        raise NotSymmetric("psd_sqrt: matrix is not symmetric")
    lam, Q = np.linalg.eigh(_sym(M))
    if lam.min() < -PSD_TOL:
        raise NegativeEigenvalue(f"psd_sqrt: eigenvalue {lam.min():.3g}")
    lam = np.clip(lam, 0.0, None)
    return _sym((Q * np.sqrt(lam)) @ Q.T)


@dataclass(frozen=True, eq=False)
class DerivedCoefficients:
    Btilde: np.ndarray
    betatilde: np.ndarray
    Ck: list
    Cbar: np.ndarray
    betatilde2: np.ndarray
    Ctilde: np.ndarray | None
    V: np.ndarray
    a: float
    b: float
    spectral: SpectralSummary

    @property
    def critical(self) -> bool:
        return abs(self.spectral.s) < CRITICAL_TOL

    @property
    def expB(self) -> np.ndarray:
        return scipy.linalg.expm(self.Btilde)

    def to_dict(self) -> dict:
        return {
            "Btilde": self.Btilde.tolist(),
            "betatilde": self.betatilde.tolist(),
            "Ck": [C.tolist() for C in self.Ck],
            "Cbar": self.Cbar.tolist(),
            "betatilde2": self.betatilde2.tolist(),
            "Ctilde": None if self.Ctilde is None else self.Ctilde.tolist(),
            "V": self.V.tolist(),
            "a": self.a,
            "b": self.b,
            "critical": self.critical,
            "spectral": self.spectral.to_dict(),
        }


def derive(spec: ModelSpec) -> DerivedCoefficients:
    """All derived quantities for an irreducible model.

    ``Ctilde`` is ``None`` unless the model is critical.
    """
    spec = validate(spec)
    Bt = effective_branching(spec)
    bt = immigration_mean(spec)
    Ck = branching_covariances(spec)
    summ = perron(Bt)
    Cbar = aggregate_covariance(Ck, summ.u)
    bt2 = unit_time_drift(spec, Bt, bt)
    Ct = None
    if abs(summ.s) < CRITICAL_TOL:
        Ct = integrated_covariance(spec, Bt, Ck, summ.u, summ)
    V = noise_matrix_V(spec, Bt, bt, Ck)
    a, b = limit_sde_coefficients(bt, Cbar, summ.v)
    return DerivedCoefficients(Bt, bt, Ck, Cbar, bt2, Ct, V, a, b, summ)

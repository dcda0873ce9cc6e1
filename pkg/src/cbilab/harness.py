"""Monte Carlo checks of the diffusion approximation for critical CBI models.

The scaled skeleton ``X_{floor(nt)} / n`` of a critical irreducible model
collapses onto the ray through the right Perron vector ``u``, and its
projection ``<v, X_{floor(nt)}> / n`` approaches a gamma law with shape
``2a/b`` and rate ``2/(b t)``.  This module builds the statistics used to
watch that happen at finite ``n``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammainc

from .coefficients import derive
from .errors import (
    AllZeroMass,
    EmptySample,
    HorizonTooShort,
    LengthMismatch,
    NotCritical,
    StepTooLarge,
)
from .model import ModelSpec, validate
from .moments import Regime, classify, mean_at
from .simulate import ensemble_skeleton, simulate_cbi_ensemble
from .spectral import matrix_exp

log = logging.getLogger(__name__)

DEFAULT_N_GRID = (25, 50, 100, 200)
KS_THRESHOLD = 0.06
KS_REFERENCE_PATHS = 2000


@dataclass(frozen=True, eq=False)
class MartingaleSeries:
    M: np.ndarray
    skeleton: np.ndarray


def martingale_differences(skeleton, Btilde, betatilde2) -> MartingaleSeries:
    """``M_k = X_k - exp(Btilde) X_{k-1} - betatilde2`` for ``k = 1..K``.

    ``skeleton`` has time on axis 0 and coordinates on the last axis; any
    axes in between (e.g. paths) are carried along.
    """
    X = np.asarray(skeleton, float)
    if X.shape[0] < 2:
        raise LengthMismatch("need at least two skeleton points")
    E = matrix_exp(Btilde, 1.0)
    M = X[1:] - X[:-1] @ E.T - np.asarray(betatilde2, float)
    return MartingaleSeries(M, X)


def reconstruct_skeleton(series: MartingaleSeries, Btilde, betatilde2) -> np.ndarray:
    """Rebuild ``X_k = e^{kB} X_0 + sum_j e^{(k-j)B} (M_j + betatilde2)``."""
    M = series.M
    X0 = series.skeleton[0]
    K = M.shape[0]
    powers = [matrix_exp(Btilde, float(k)) for k in range(K + 1)]
    inc = M + np.asarray(betatilde2, float)
    out = [X0]
    for k in range(1, K + 1):
        xk = X0 @ powers[k].T
        for j in range(1, k + 1):
            xk = xk + inc[j - 1] @ powers[k - j].T
        out.append(xk)
    return np.array(out)


def scaled_projection(skeleton, n: int, v, t: float):
    """``<v, X_{floor(nt)}> / n`` (per path if the skeleton carries paths)."""
    X = np.asarray(skeleton, float)
    k = math.floor(n * t + 1e-9)
    if k >= X.shape[0]:
        raise HorizonTooShort(f"skeleton ends at {X.shape[0] - 1}, need {k}")
    return X[k] @ np.asarray(v, float) / n


def gamma_cdf(x, shape: float, rate: float):
    return gammainc(shape, rate * np.maximum(np.asarray(x, float), 0.0))


def ks_distance(samples, shape: float, rate: float) -> float:
    """Sup distance between the empirical CDF and the gamma(shape, rate) CDF."""
    x = np.sort(np.asarray(samples, float).reshape(-1))
    n = len(x)
    if n == 0:
        raise EmptySample("ks_distance needs at least one sample")
    F = gamma_cdf(x, shape, rate)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def kolmogorov_quantile_99(n: int) -> float:
    return 1.628 / math.sqrt(n)


@dataclass(frozen=True, eq=False)
class FrequencyResult:
    errors: np.ndarray
    dropped: int
    used: int

    @property
    def dropped_fraction(self) -> float:
        return self.dropped / (self.dropped + self.used)


def relative_frequencies(states, u) -> FrequencyResult:
    """Median over paths of ``|X_i / sum_k X_k - u_i|``, per type.

    Paths with zero total mass are dropped and counted.
    """
    X = np.atleast_2d(np.asarray(states, float))
    tot = X.sum(axis=1)
    keep = tot > 0
    if not keep.any():
        raise AllZeroMass("every path has zero total mass")
    freq = X[keep] / tot[keep, None]
    err = np.median(np.abs(freq - np.asarray(u, float)), axis=0)
    return FrequencyResult(err, int((~keep).sum()), int(keep.sum()))


def frequency_ratio(states, i: int, j: int) -> float:
    """Median of ``X_i / X_j`` over paths with ``X_j > 0`` (0-based types)."""
    X = np.atleast_2d(np.asarray(states, float))
    keep = X[:, j] > 0
    if not keep.any():
        raise AllZeroMass(f"type {j + 1} is zero on every path")
    return float(np.median(X[keep, i] / X[keep, j]))


def ray_angle(states, u) -> np.ndarray:
    """Angle between each state and ``u``; NaN for zero states."""
    X = np.atleast_2d(np.asarray(states, float))
    u = np.asarray(u, float)
    norms = np.linalg.norm(X, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = X @ u / (norms * np.linalg.norm(u))
    return np.where(norms > 0, np.arccos(np.clip(cos, -1.0, 1.0)), np.nan)


@dataclass(frozen=True, eq=False)
class GrowthSeries:
    """``E||Y_g||^p / scale(g)`` along a grid, with its spread and log-log slope."""

    grid: np.ndarray
    ratios: np.ndarray

    @property
    def spread(self) -> float:
        return float(self.ratios.max() / self.ratios.min())

    @property
    def slope(self) -> float:
        return float(np.polyfit(np.log(self.grid), np.log(self.ratios), 1)[0])


def moment_growth(states_on_grid, q: int, t_grid) -> GrowthSeries:
    """Monte Carlo ``E||X_t||^q / (1 + t)^q`` for each ``t`` in ``t_grid``.

    ``states_on_grid[g]`` holds the states of all paths at ``t_grid[g]``.
    """
    t_grid = np.asarray(t_grid, float)
    r = [np.mean(np.linalg.norm(np.asarray(S, float), axis=-1) ** q) / (1 + t) ** q
         for S, t in zip(states_on_grid, t_grid)]
    return GrowthSeries(t_grid, np.array(r))


def martingale_growth(M, q: int, n_grid) -> GrowthSeries:
    """Monte Carlo ``E||M_n||^{2q} / n^q``; ``M[k-1]`` holds ``M_k`` for all paths."""
    n_grid = np.asarray(n_grid, int)
    r = [np.mean(np.linalg.norm(M[n - 1], axis=-1) ** (2 * q)) / n ** q for n in n_grid]
    return GrowthSeries(n_grid.astype(float), np.array(r))


def martingale_zscores(M) -> np.ndarray:
    """``mean(M_k) / SE`` per step and coordinate, over the path axis."""
    M = np.asarray(M, float)
    N = M.shape[1]
    sd = M.std(axis=1, ddof=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = M.mean(axis=1) / (sd / math.sqrt(N))
    return np.where(sd > 0, z, 0.0)


def ks_threshold(n_paths: int) -> float:
    return KS_THRESHOLD * max(1.0, math.sqrt(KS_REFERENCE_PATHS / n_paths))


def level_dt(model, horizon: float) -> float:
    """Initial step for a level: ``min(1e-2, 0.1 / rate bound)`` with ``1/dt`` integral."""
    mass_mu = np.array([m.total_mass for m in model.mu])
    rate = model.nu.total_mass
    if mass_mu.any():
        xb = 4.0 * float(mean_at(model, horizon).max()) + 10.0
        rate += float(mass_mu.sum()) * xb
    dt = 1e-2 if rate == 0 else min(1e-2, 0.1 / rate)
    return 1.0 / math.ceil(1.0 / dt - 1e-9)


def simulate_skeleton(model, horizon: int, n_paths: int, seed: int, max_halvings: int = 6):
    """Integer skeleton of ``n_paths`` CBI paths, refining ``dt`` if a jump rate outgrows it."""
    dt = level_dt(model, horizon)
    for _ in range(max_halvings + 1):
        per_unit = round(1.0 / dt)
        try:
            ens = simulate_cbi_ensemble(model, float(horizon), dt, n_paths, seed,
                                        record_every=per_unit)
            return ensemble_skeleton(ens), dt
        except StepTooLarge:
            log.info("step too large at dt=%g, halving", dt)
            dt = 1.0 / (2 * per_unit)
    raise StepTooLarge(f"jump rates still too large at dt = {dt}")


def level_seed(seed: int, n: int) -> int:
    return int(np.random.SeedSequence([seed, n]).generate_state(1, dtype=np.uint64)[0])


@dataclass(eq=False)
class ConvergenceReport:
    model: dict
    n_grid: list
    t: float
    n_paths: int
    seed: int
    a: float
    b: float
    spectral: dict
    levels: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)

    @property
    def ks(self) -> list:
        return [lv["ks"] for lv in self.levels]

    @property
    def max_ks_increase(self) -> float:
        ks = self.ks
        if any(k is None for k in ks) or len(ks) < 2:
            return 0.0
        return float(max(0.0, max(b - a for a, b in zip(ks, ks[1:]))))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n_grid": self.n_grid,
            "t": self.t,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "limit": {"a": self.a, "b": self.b,
                      "shape": 2 * self.a / self.b if self.b > 0 else None,
                      "rate": 2 / (self.b * self.t) if self.b > 0 else None},
            "spectral": self.spectral,
            "levels": self.levels,
            "summary": {"ks": self.ks, "max_ks_increase": self.max_ks_increase,
                        "final_ks": self.ks[-1] if self.levels else None},
        }


def run_convergence(model: ModelSpec, n_grid=DEFAULT_N_GRID, t: float = 1.0,
                    n_paths: int = 2000, seed: int = 42, q: int = 1) -> ConvergenceReport:
    """Simulate each scaling level and collect the convergence statistics."""
    model = validate(model)
    n_grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    cls = classify(model)
    if cls.regime is not Regime.CRITICAL:
        raise NotCritical(f"model is {cls.regime.value} (s = {cls.s:.3g})")
    coef = derive(model)
    summ = coef.spectral
    a, b = coef.a, coef.b
    report = ConvergenceReport(model.to_dict(), n_grid, t, n_paths, seed, a, b, summ.to_dict())
    started = time.time()
    for n in n_grid:
        horizon = math.floor(n * t + 1e-9)
        if horizon < 1:
            raise HorizonTooShort(f"n*t = {n * t} is below one time unit")
        lseed = level_seed(seed, n)
        skel, dt = simulate_skeleton(model, horizon, n_paths, lseed)
        proj = scaled_projection(skel, n, summ.v, t)
        level = {"n": n, "horizon": horizon, "dt": dt, "seed": lseed,
                 "mean_projection": float(proj.mean())}
        if b > 0:
            level["ks"] = ks_distance(proj, 2 * a / b, 2 / (b * t))
            level["ks_threshold"] = ks_threshold(n_paths)
        else:
            level["ks"] = None
            level["degenerate_error"] = float(abs(proj.mean() - a * t))
            level["degenerate_tolerance"] = 3.0 / math.sqrt(n)
        XH = skel[horizon]
        if np.any(coef.betatilde > 0):
            fr = relative_frequencies(XH, summ.u)
            level["freq_errors"] = fr.errors.tolist()
            level["zero_mass_dropped"] = fr.dropped
            level["zero_mass_fraction"] = fr.dropped_fraction
        ang = ray_angle(XH, summ.u)
        level["median_ray_angle"] = float(np.nanmedian(ang)) if np.isfinite(ang).any() else None
        ms = martingale_differences(skel, coef.Btilde, coef.betatilde2)
        z = martingale_zscores(ms.M[:min(10, horizon)])
        level["martingale_max_abs_z"] = float(np.max(np.abs(z)))
        level["moment_ratio_X"] = float(
            np.mean(np.linalg.norm(XH, axis=1) ** q) / (1 + horizon) ** q)
        level["moment_ratio_M"] = float(
            np.mean(np.linalg.norm(ms.M[horizon - 1], axis=1) ** (2 * q)) / horizon ** q)
        level["q"] = q
        log.info("n=%d ks=%s", n, level["ks"])
        report.levels.append(level)
    report.runtime = {"seconds": time.time() - started}
    return report


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def write_report(report: ConvergenceReport, out_dir) -> list[Path]:
    """Write ``report.json``, ``ks.csv``, ``freq.csv``, ``moments.csv`` and ``meta.json``.

    Everything except ``meta.json`` is a deterministic function of the inputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "report.json"
    p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    paths.append(p)

    p = out / "ks.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "ks", "threshold"])
        for lv in report.levels:
            if lv["ks"] is None:
                w.writerow([lv["n"], _fmt(lv["degenerate_error"]), _fmt(lv["degenerate_tolerance"])])
            else:
                w.writerow([lv["n"], _fmt(lv["ks"]), _fmt(lv["ks_threshold"])])
    paths.append(p)

    p = out / "freq.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "type", "median_error"])
        for lv in report.levels:
            for i, e in enumerate(lv.get("freq_errors", [])):
                w.writerow([lv["n"], i + 1, _fmt(e)])
    paths.append(p)

    p = out / "moments.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_or_n", "q", "ratio"])
        for lv in report.levels:
            w.writerow([lv["horizon"], lv["q"], _fmt(lv["moment_ratio_X"])])
        for lv in report.levels:
            w.writerow([lv["horizon"], 2 * lv["q"], _fmt(lv["moment_ratio_M"])])
    paths.append(p)

    p = out / "meta.json"
    p.write_text(json.dumps({"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
                             "runtime": report.runtime, "seed": report.seed}, indent=2) + "\n")
    paths.append(p)
    return paths

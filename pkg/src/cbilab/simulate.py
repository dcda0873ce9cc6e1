"""Path simulation for CBI models and for their squared-Bessel limit.

The CBI scheme discretises the generator directly: Euler-Maruyama for the
diffusion and drift (including the compensation ``-x_i int (1 ^ z_i) mu_i(dz)``
on coordinate ``i``), and Bernoulli thinning for the compound-Poisson jumps
with rates frozen at the left end of each step.  States are clamped at 0.

Randomness: path ``i`` of a run seeded with ``seed`` always draws from its own
stream ``SeedSequence(seed, spawn_key=(i,))``, in fixed blocks of
``BLOCK`` steps, so a path is bit-for-bit the same whether it is simulated
alone or inside an ensemble, in any chunking and on any number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, NonFinite, StepTooLarge
from .model import ModelSpec, validate

BLOCK = 512
CHUNK = 1024
MAX_JUMP_PROB = 0.1


def path_rng(seed: int, path_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(path_id,)))


def n_workers() -> int:
    n = int(os.environ.get("CBI_LAB_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def step_count(T: float, dt: float) -> int:
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise GridMismatch(f"T = {T} is not an integer multiple of dt = {dt}")
    return n


@dataclass(frozen=True, eq=False)
class Path:
    times: np.ndarray
    states: np.ndarray
    seed: int
    scheme: str
    path_id: int = 0
    dt: float | None = None


@dataclass(frozen=True, eq=False)
class Ensemble:
    """States of ``n_paths`` paths at ``times``; ``states[k, i]`` is path ``i``."""

    times: np.ndarray
    states: np.ndarray
    seed: int
    scheme: str
    dt: float

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]

    def path(self, i: int) -> Path:
        return Path(self.times, self.states[:, i], self.seed, self.scheme, i, self.dt)


@dataclass(frozen=True, eq=False)
class LimitSample:
    t: float
    values: np.ndarray
    a: float
    b: float


class _Jumps:
    """Cumulative-weight tables for drawing atoms of a finite measure."""

    def __init__(self, measure):
        self.mass = measure.total_mass
        self.points = np.asarray(measure.points)
        self.cum = np.cumsum(measure.weights) / self.mass if self.mass > 0 else np.zeros(0)

    def draw(self, u01: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.cum, u01, side="right")
        return self.points[np.minimum(idx, len(self.cum) - 1)]


def _run_chunk(model, x0, n_steps, dt, seed, ids, record_every):
    d = model.d
    n = len(ids)
    rngs = [path_rng(seed, int(i)) for i in ids]
    B = model.B
    beta = model.beta
    comp = np.array([
        float(m.weights @ np.minimum(1.0, m.points[:, i])) if len(m) else 0.0
        for i, m in enumerate(model.mu)
    ])
    diff = 2.0 * model.c * dt
    imm = _Jumps(model.nu)
    br = [_Jumps(m) for m in model.mu]
    p_imm = imm.mass * dt
    if p_imm > MAX_JUMP_PROB:
        raise StepTooLarge(f"immigration jump probability {p_imm:.3g} per step exceeds {MAX_JUMP_PROB}")

    n_rec = n_steps // record_every + 1
    out = np.empty((n_rec, n, d))
    X = np.tile(np.asarray(x0, float), (n, 1))
    out[0] = X
    rec = 1
    step = 0
    while step < n_steps:
        nb = min(BLOCK, n_steps - step)
        xi = np.empty((nb, n, d))
        uu = np.empty((nb, n, d + 1))
        for p, rng in enumerate(rngs):
            xi[:, p] = rng.standard_normal((nb, d))
            uu[:, p] = rng.random((nb, d + 1))
        for b in range(nb):
            Xp = np.maximum(X, 0.0)
            drift = np.tile(beta, (n, 1))
            for j in range(d):
                drift += B[:, j] * X[:, j, None]
            drift -= comp * X
            Xn = X + drift * dt + np.sqrt(diff * Xp) * xi[b]
            if p_imm > 0:
                u = uu[b, :, 0]
                hit = u < p_imm
                if hit.any():
                    Xn[hit] += imm.draw(u[hit] / p_imm)
            for i, J in enumerate(br):
                if J.mass == 0:
                    continue
                p = Xp[:, i] * (J.mass * dt)
                if p.max() > MAX_JUMP_PROB:
                    raise StepTooLarge(
                        f"branching jump probability {p.max():.3g} for type {i + 1} "
                        f"exceeds {MAX_JUMP_PROB}; reduce dt")
                u = uu[b, :, i + 1]
                hit = u < p
                if hit.any():
                    Xn[hit] += J.draw(u[hit] / p[hit])
            X = np.maximum(Xn, 0.0)
            step += 1
            if step % record_every == 0:
                out[rec] = X
                rec += 1
        if not np.isfinite(X).all():
            raise NonFinite(f"CBI simulation overflow before step {step}")
    return out


def _ensemble(run, n_paths, seed):
    ids = np.arange(n_paths)
    chunks = [ids[i:i + CHUNK] for i in range(0, n_paths, CHUNK)]
    workers = min(n_workers(), len(chunks))
    if workers <= 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, chunks))
    return np.concatenate(parts, axis=1)


def _check_dt(dt, limit):
    if not 0 < dt <= limit * (1 + 1e-12):
        raise ValueError(f"dt must lie in (0, {limit}]")


def simulate_cbi_ensemble(model: ModelSpec, T: float, dt: float, n_paths: int, seed: int,
                          record_every: int = 1, x0=None) -> Ensemble:
    """Simulate ``n_paths`` CBI paths on ``[0, T]``, recording every ``record_every`` steps."""
    model = validate(model)
    _check_dt(dt, 0.01)
    n_steps = step_count(T, dt)
    if n_steps % record_every:
        raise GridMismatch("record_every must divide the number of steps")
    x0 = model.x0_mean if x0 is None else np.asarray(x0, float)
    states = _ensemble(lambda ids: _run_chunk(model, x0, n_steps, dt, seed, ids, record_every),
                       n_paths, seed)
    times = np.arange(states.shape[0]) * (record_every * dt)
    return Ensemble(times, states, seed, "CBI-Euler", dt)


def simulate_cbi(model: ModelSpec, T: float, dt: float, seed: int, path_id: int = 0) -> Path:
    """One CBI path on the full time grid ``0, dt, ..., T``."""
    model = validate(model)
    _check_dt(dt, 0.01)
    n_steps = step_count(T, dt)
    states = _run_chunk(model, model.x0_mean, n_steps, dt, seed, [path_id], 1)[:, 0]
    return Path(np.arange(n_steps + 1) * dt, states, seed, "CBI-Euler", path_id, dt)


def _run_limit_chunk(a, b, x0, n_steps, dt, seed, ids, record_every):
    n = len(ids)
    rngs = [path_rng(seed, int(i)) for i in ids]
    out = np.empty((n_steps // record_every + 1, n))
    x = np.full(n, float(x0))
    out[0] = x
    rec, step = 1, 0
    while step < n_steps:
        nb = min(BLOCK, n_steps - step)
        xi = np.empty((nb, n))
        for p, rng in enumerate(rngs):
            xi[:, p] = rng.standard_normal(nb)
        for k in range(nb):
            x = np.maximum(x + a * dt + np.sqrt(b * np.maximum(x, 0.0) * dt) * xi[k], 0.0)
            step += 1
            if step % record_every == 0:
                out[rec] = x
                rec += 1
        if not np.isfinite(x).all():
            raise NonFinite("limit SDE simulation overflow")
    return out


def simulate_limit_ensemble(a: float, b: float, T: float, dt: float, n_paths: int, seed: int,
                            x0: float = 0.0, record_every: int = 1) -> Ensemble:
    """Euler scheme for ``dX = a dt + sqrt(b X^+) dW``, clamped at 0."""
    _check_dt(dt, 1e-3)
    if a < 0 or b < 0 or x0 < 0:
        raise ValueError("a, b and x0 must be non-negative")
    n_steps = step_count(T, dt)
    if n_steps % record_every:
        raise GridMismatch("record_every must divide the number of steps")
    states = _ensemble(
        lambda ids: _run_limit_chunk(a, b, x0, n_steps, dt, seed, ids, record_every),
        n_paths, seed)
    times = np.arange(states.shape[0]) * (record_every * dt)
    return Ensemble(times, states[..., None], seed, "Limit-Euler", dt)


def simulate_limit_euler(a: float, b: float, T: float, dt: float, seed: int,
                         x0: float = 0.0, path_id: int = 0) -> Path:
    _check_dt(dt, 1e-3)
    if a < 0 or b < 0 or x0 < 0:
        raise ValueError("a, b and x0 must be non-negative")
    n_steps = step_count(T, dt)
    states = _run_limit_chunk(a, b, x0, n_steps, dt, seed, [path_id], 1)[:, 0]
    return Path(np.arange(n_steps + 1) * dt, states, seed, "Limit-Euler", path_id, dt)


def sample_limit_exact(a: float, b: float, t: float, n: int, seed: int) -> LimitSample:
    """Exact draws of the limit process at time ``t`` started from 0.

    Gamma with shape ``2a/b`` and rate ``2/(b t)``; the point mass ``a t``
    when ``b = 0``; the point mass 0 when ``a = 0``.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if a < 0 or b < 0:
        raise ValueError("a and b must be non-negative")
    if b == 0:
        vals = np.full(n, a * t)
    elif a == 0:
        vals = np.zeros(n)
    else:
        rng = np.random.default_rng(seed)
        vals = rng.gamma(2.0 * a / b, b * t / 2.0, size=n)
    return LimitSample(t, vals, a, b)


def integer_skeleton(path: Path) -> np.ndarray:
    """States at ``t = 0, 1, ..., floor(T)``."""
    times = np.asarray(path.times)
    dt = path.dt if path.dt is not None else times[1] - times[0]
    per_unit = round(1.0 / dt)
    if abs(per_unit * dt - 1.0) > 1e-9:
        raise GridMismatch(f"dt = {dt} does not divide 1")
    idx = np.arange(0, len(times), per_unit)
    if not np.allclose(times[idx], np.arange(len(idx)), atol=1e-9):
        raise GridMismatch("path grid does not contain the integer times")
    return np.asarray(path.states)[idx]


def ensemble_skeleton(ens: Ensemble) -> np.ndarray:
    """Integer-time states of every path: shape ``(floor(T) + 1, n_paths, d)``."""
    times = ens.times
    step = times[1] - times[0]
    per_unit = round(1.0 / step)
    if abs(per_unit * step - 1.0) > 1e-9:
        raise GridMismatch("recorded grid does not contain the integer times")
    return ens.states[::per_unit]

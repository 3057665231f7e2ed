"""Time-stepping kernels for square-root diffusions.

All Euler steps use full truncation at zero, which preserves nonnegativity
and produces exact zeros. Because every drift vanishes exactly at zero
(f(0) = 0 and F(a, 0) = 0), a truncated path that hits zero stays there
without any explicit freezing; immigration drifts deliberately lift paths
off zero while active.

The diffusion coefficient is 2*sqrt(u) throughout (quadratic variation
4*u*dt per unit time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drift import DriftSpec
from .paths import SamplePath, TimeGrid
from .streams import NoiseStream

__all__ = [
    "SchemeConfig",
    "step_sqrt",
    "simulate_Z",
    "simulate_linear_exact",
    "simulate_immigration",
    "simulate_tilted",
    "extinction_time",
    "batch_endpoints_Z",
    "batch_endpoints_immigration",
    "batch_linear_exact",
]

ABSORB = "absorb_at_zero"
REFLECT = "reflect_free"


@dataclass(frozen=True)
class SchemeConfig:
    """Step size and absorption policy for one simulation.

    ``absorb_at_zero`` freezes a path at its first exact zero (population
    paths, where f(0) = 0 makes zero a trap). ``reflect_free`` truncates at
    zero but lets positive drift lift the path off again (immigration).
    """

    dt: float
    absorption: str = ABSORB

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.absorption not in (ABSORB, REFLECT):
            raise ValueError(f"unknown absorption policy {self.absorption!r}")


def step_sqrt(z: float, drift_value: float, dt: float, gaussian: float,
              policy: str = ABSORB) -> float:
    """One full-truncation Euler step of du = drift dt + 2 sqrt(u) dB.

    Under ``absorb_at_zero`` a state of exactly zero is a trap regardless
    of the drift value; under ``reflect_free`` the drift still acts.
    """
    if z < 0:
        raise ValueError(f"state must be nonnegative, got {z}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if z == 0.0 and policy == ABSORB:
        return 0.0
    return max(0.0, z + drift_value * dt + 2.0 * np.sqrt(z * dt) * gaussian)


def extinction_time(path: SamplePath):
    """First grid time at which the path is zero, or None."""
    zeros = np.flatnonzero(path.values == 0.0)
    if zeros.size == 0:
        return None
    return float(zeros[0] * path.grid.dt)


def simulate_Z(x: float, spec: DriftSpec, grid: TimeGrid, stream: NoiseStream) -> SamplePath:
    """Euler path of the interacting population SDE dZ = f(Z)dt + 2 sqrt(Z) dB.

    Absorbed at its first zero (legitimate because f(0) = 0).
    """
    if x < 0:
        raise ValueError(f"initial mass must be nonnegative, got {x}")
    if not spec.passes_linear_growth:
        raise ValueError(
            f"drift {spec.label!r} failed the increment-growth condition; refusing to simulate"
        )
    values = np.zeros(grid.n_steps + 1)
    values[0] = x
    if x == 0.0:
        return SamplePath(grid, values, absorbed_at=0)
    g = stream.generator().standard_normal(grid.n_steps)
    dt = grid.dt
    sdt = np.sqrt(dt)
    u = float(x)
    absorbed_at = None
    for k in range(grid.n_steps):
        u = max(0.0, u + float(spec.evaluate(u)) * dt + 2.0 * np.sqrt(u) * sdt * g[k])
        values[k + 1] = u
        if u == 0.0:
            absorbed_at = k + 1
            break
    return SamplePath(grid, values, absorbed_at=absorbed_at)


def simulate_linear_exact(x: float, theta: float, t: float, stream: NoiseStream,
                          size: int | None = None):
    """Exact draw(s) of the linear-drift diffusion at time t.

    Uses the compound Poisson-Exponential representation of the transition
    law: a Poisson number of surviving family lines, each contributing an
    independent Exponential mass (equal in law to the noncentral-chi-square
    transition). For theta = 0 the count has mean x/(2t) and the summands
    have mean 2t.
    """
    if x < 0:
        raise ValueError(f"initial mass must be nonnegative, got {x}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    n = 1 if size is None else int(size)
    if x == 0.0:
        out = np.zeros(n)
        return float(out[0]) if size is None else out
    if theta == 0.0:
        count_mean = x / (2.0 * t)
        scale = 2.0 * t
    else:
        growth = np.exp(theta * t)
        scale = 2.0 * (growth - 1.0) / theta
        count_mean = x * growth / scale
    rng = stream.generator()
    counts = rng.poisson(count_mean, n)
    out = np.zeros(n)
    pos = counts > 0
    if np.any(pos):
        out[pos] = rng.gamma(shape=counts[pos].astype(float), scale=scale)
    return float(out[0]) if size is None else out


def simulate_immigration(y: float, cutoff: float, grid: TimeGrid,
                         stream: NoiseStream) -> SamplePath:
    """Euler path of dU = 4*1{s < cutoff} ds + 2 sqrt(U) dB.

    While immigration is active the path may touch zero and bounce back
    (reflect_free); once the cutoff has passed the first zero absorbs.
    cutoff may be infinite.
    """
    if y < 0:
        raise ValueError(f"initial value must be nonnegative, got {y}")
    if cutoff < 0:
        raise ValueError(f"cutoff must be nonnegative, got {cutoff}")
    values = np.zeros(grid.n_steps + 1)
    values[0] = y
    g = stream.generator().standard_normal(grid.n_steps)
    dt = grid.dt
    sdt = np.sqrt(dt)
    u = float(y)
    cutoff_steps = _cutoff_steps(cutoff, dt, grid.n_steps)
    absorbed_at = 0 if (u == 0.0 and cutoff_steps == 0) else None
    for k in range(grid.n_steps):
        drift = 4.0 if k < cutoff_steps else 0.0
        u = max(0.0, u + drift * dt + 2.0 * np.sqrt(u) * sdt * g[k])
        values[k + 1] = u
        if u == 0.0 and drift == 0.0:
            absorbed_at = k + 1
            break
    return SamplePath(grid, values, absorbed_at=absorbed_at)


def _cutoff_steps(cutoff: float, dt: float, n_steps: int) -> int:
    """Number of initial steps whose left endpoint lies in [0, cutoff)."""
    if np.isinf(cutoff):
        return n_steps
    return min(n_steps, int(np.ceil(cutoff / dt - 1e-9)))


def simulate_tilted(spec: DriftSpec, z: SamplePath, y: float, grid: TimeGrid,
                    stream: NoiseStream) -> SamplePath:
    """Euler path of dV = (4 + F(z_s, V)) ds + 2 sqrt(V) dB (reflect_free).

    The immigration term keeps the path positive for all positive times
    (statistically), so no absorption applies.
    """
    if y < 0:
        raise ValueError(f"initial value must be nonnegative, got {y}")
    _require_compatible(z, grid)
    values = np.zeros(grid.n_steps + 1)
    values[0] = y
    g = stream.generator().standard_normal(grid.n_steps)
    dt = grid.dt
    sdt = np.sqrt(dt)
    u = float(y)
    zv = z.values
    for k in range(grid.n_steps):
        drift = 4.0 + float(spec.evaluate(zv[k] + u) - spec.evaluate(zv[k]))
        u = max(0.0, u + drift * dt + 2.0 * np.sqrt(u) * sdt * g[k])
        values[k + 1] = u
    return SamplePath(grid, values, absorbed_at=None)


def _require_compatible(z: SamplePath, grid: TimeGrid):
    if abs(z.grid.dt - grid.dt) > 1e-12 * grid.dt:
        raise ValueError("z path and target grid must share the same dt")
    if z.grid.n_steps < grid.n_steps:
        raise ValueError("z path must cover the target grid horizon")


def batch_endpoints_Z(spec: DriftSpec, x: float, t: float, dt: float, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Endpoint values of n independent Euler paths of the population SDE."""
    if not spec.passes_linear_growth:
        raise ValueError(
            f"drift {spec.label!r} failed the increment-growth condition; refusing to simulate"
        )
    n_steps = _steps_for(t, dt)
    out = np.zeros(n)
    u = np.full(n, float(x))
    idx = np.arange(n)
    sdt = np.sqrt(dt)
    for k in range(n_steps):
        g = rng.standard_normal(u.size)
        f = spec.evaluate(u)
        np.multiply(g, 2.0 * sdt * np.sqrt(u), out=g)
        u = np.maximum(0.0, u + f * dt + g)
        if (k & 127) == 127 and u.size > 256:
            alive = u > 0.0
            if np.count_nonzero(alive) < 0.7 * u.size:
                u = u[alive]
                idx = idx[alive]
                if u.size == 0:
                    return out
    out[idx] = u
    return out


def batch_endpoints_immigration(y: float, cutoff: float, t: float, dt: float,
                                n: int, rng: np.random.Generator) -> np.ndarray:
    """Endpoint values at t of n immigration paths dU = 4*1{s<cutoff} ds + 2 sqrt(U) dB."""
    n_steps = _steps_for(t, dt)
    cutoff_steps = _cutoff_steps(cutoff, dt, n_steps)
    u = np.full(n, float(y))
    sdt = np.sqrt(dt)
    for k in range(n_steps):
        g = rng.standard_normal(n)
        drift = 4.0 if k < cutoff_steps else 0.0
        u = np.maximum(0.0, u + drift * dt + 2.0 * sdt * np.sqrt(u) * g)
    return u


def batch_linear_exact(x: float, theta: float, t: float, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """n exact draws of the linear-drift transition (see simulate_linear_exact)."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if x == 0.0:
        return np.zeros(n)
    if theta == 0.0:
        count_mean = x / (2.0 * t)
        scale = 2.0 * t
    else:
        growth = np.exp(theta * t)
        scale = 2.0 * (growth - 1.0) / theta
        count_mean = x * growth / scale
    counts = rng.poisson(count_mean, n)
    out = np.zeros(n)
    pos = counts > 0
    if np.any(pos):
        out[pos] = rng.gamma(shape=counts[pos].astype(float), scale=scale)
    return out


def _steps_for(t: float, dt: float) -> int:
    n = int(round(t / dt))
    if n < 1 or abs(n * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"t={t} must be a positive multiple of dt={dt}")
    return n

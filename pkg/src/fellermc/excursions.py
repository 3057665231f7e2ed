"""Entrance-law samplers and the delta-slice approximation of the excursion measure.

The sigma-finite excursion measure of the driftless square-root diffusion
cannot be sampled directly. The delta-slice approximation keeps the
excursions alive at a small time delta: per unit ancestral mass they arrive
at rate 1/(2*delta) and their value at delta is Exponential with mean
2*delta (the entrance law at the slice). Excursions dying before delta
contribute exactly zero at later observation times, so the only
approximation error at times >= delta is the drift's action on (0, delta),
of order delta.

Drift-tilted excursion sampling uses the tilted dynamics dU = F(z_s, U) ds
+ 2 sqrt(U) dB directly (the tilted excursion measure is the excursion
measure of the drifted diffusion); importance weighting is useless here
because the weights are unbounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .drift import DriftSpec
from .kernels import simulate_immigration
from .mc import McEstimate, TestReport
from .paths import SamplePath, TimeGrid
from .streams import NoiseStream

__all__ = [
    "DeltaQConfig",
    "ExcursionAtom",
    "sample_entrance",
    "entrance_law_test",
    "sample_delta_excursions",
    "reconstruct_field",
    "batch_delta_atoms",
    "batch_reconstruct_endpoints",
    "generator_applied",
    "pairing",
]

# asymptotic one-sample KS critical coefficient at the 1% level
KS_COEFF_1PCT = 1.6276


@dataclass(frozen=True)
class DeltaQConfig:
    """Level of the delta-slice approximation."""

    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def rate_per_mass(self) -> float:
        return 1.0 / (2.0 * self.delta)

    @property
    def seed_mean(self) -> float:
        return 2.0 * self.delta


@dataclass(frozen=True)
class ExcursionAtom:
    """One excursion point: mass coordinate, path, and its slice seed value."""

    xi: float
    path: SamplePath
    birth_level: float

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError(f"mass coordinate must be nonnegative, got {self.xi}")


def sample_entrance(t: float, grid: TimeGrid, stream: NoiseStream) -> SamplePath:
    """One path of the zero-start immigration diffusion with cutoff t."""
    if t > grid.horizon + 1e-12:
        raise ValueError(f"t={t} exceeds the grid horizon {grid.horizon}")
    return simulate_immigration(0.0, t, grid, stream)


def entrance_law_test(t: float, n: int, dt: float, stream: NoiseStream,
                      level: float = 0.01) -> TestReport:
    """KS test of the time-t entrance value against Gamma(shape 2, scale 2t)."""
    from .kernels import batch_endpoints_immigration

    params = {"t": t, "n": n, "dt": dt, "level": level}
    if n < 30:
        return TestReport(
            name="entrance_law", params=params, statistic=float("nan"),
            threshold=float("nan"), passed=None,
            diagnostics={"note": "insufficient sample"}, seed=str(stream.path),
        )
    rng = stream.generator()
    samples = batch_endpoints_immigration(0.0, t, t, dt, n, rng)
    dist = stats.gamma(a=2.0, scale=2.0 * t)
    statistic = float(stats.kstest(samples, dist.cdf).statistic)
    threshold = np.sqrt(-0.5 * np.log(level / 2.0)) / np.sqrt(n)
    return TestReport(
        name="entrance_law", params=params, statistic=statistic,
        threshold=float(threshold), passed=bool(statistic <= threshold),
        diagnostics={"sample_mean": float(samples.mean()), "target_mean": 4.0 * t},
        seed=str(stream.path),
    )


def sample_delta_excursions(cfg: DeltaQConfig, mass: float, tilt, grid: TimeGrid,
                            stream: NoiseStream) -> list:
    """Draw the excursion atoms of one field slice.

    A Poisson(mass/(2*delta)) number of atoms receive independent uniform
    mass coordinates on [0, mass] and Exponential(mean 2*delta) seed values
    at time delta; each path is zero before delta and continues by the
    driftless kernel, or by the drift F(z_s, .) when tilt = (spec, z_path).
    """
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    if cfg.delta >= grid.horizon:
        raise ValueError(f"delta={cfg.delta} must be below the horizon {grid.horizon}")
    birth_idx = grid.index_of(cfg.delta)
    rng = stream.child("atoms").generator()
    count = int(rng.poisson(mass * cfg.rate_per_mass))
    xis = rng.uniform(0.0, mass, count)
    seeds = rng.exponential(cfg.seed_mean, count)
    spec_z = None
    if tilt is not None:
        spec_z = (tilt[0], np.asarray(tilt[1].values, dtype=float))
        if tilt[1].grid.n_steps < grid.n_steps:
            raise ValueError("tilt path must cover the grid horizon")
    atoms = []
    dt, sdt = grid.dt, np.sqrt(grid.dt)
    for i in range(count):
        g = stream.child("path", i).generator().standard_normal(grid.n_steps - birth_idx)
        values = np.zeros(grid.n_steps + 1)
        u = float(seeds[i])
        values[birth_idx] = u
        for j, k in enumerate(range(birth_idx, grid.n_steps)):
            drift = 0.0
            if spec_z is not None:
                spec, zv = spec_z
                drift = float(spec.evaluate(zv[k] + u) - spec.evaluate(zv[k]))
            u = max(0.0, u + drift * dt + 2.0 * np.sqrt(u) * sdt * g[j])
            values[k + 1] = u
            if u == 0.0:
                break
        # a zero at the birth index only counts as absorption if the seed was zero
        zeros = np.flatnonzero(values[birth_idx:] == 0.0)
        absorbed = int(zeros[0]) + birth_idx if zeros.size else None
        atoms.append(ExcursionAtom(
            xi=float(xis[i]),
            path=SamplePath(grid, values, absorbed_at=absorbed),
            birth_level=float(seeds[i]),
        ))
    return atoms


def batch_delta_atoms(cfg: DeltaQConfig, mass: float, t: float, dt: float,
                      rng: np.random.Generator, n_rep: int, tilt=None) -> dict:
    """Vectorized delta-slice atoms for n_rep independent field replicates.

    Returns per-replicate atom counts, counts alive at t, and the summed
    atom values at t. Padding atoms carry zero seeds and contribute nothing.
    """
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    birth_idx = int(round(cfg.delta / dt))
    n_steps = int(round(t / dt))
    if abs(birth_idx * dt - cfg.delta) > 1e-9 or birth_idx < 1:
        raise ValueError(f"delta={cfg.delta} must be a positive multiple of dt={dt}")
    if birth_idx >= n_steps:
        raise ValueError("delta must be below the observation time")
    counts = rng.poisson(mass * cfg.rate_per_mass, n_rep)
    k_max = int(counts.max()) if n_rep else 0
    seeds = rng.exponential(cfg.seed_mean, (n_rep, k_max))
    seeds[np.arange(k_max)[None, :] >= counts[:, None]] = 0.0
    u = seeds.reshape(-1)
    sdt = np.sqrt(dt)
    spec = zv = None
    if tilt is not None:
        spec, z_path = tilt
        zv = np.asarray(z_path.values, dtype=float)
    for k in range(birth_idx, n_steps):
        g = rng.standard_normal(u.size)
        drift = 0.0
        if spec is not None:
            drift = spec.evaluate(zv[k] + u) - spec.evaluate(zv[k])
        u = np.maximum(0.0, u + drift * dt + (2.0 * sdt) * np.sqrt(u) * g)
    vals = u.reshape(n_rep, k_max) if k_max else np.zeros((n_rep, 0))
    return {
        "counts": counts,
        "alive_at_t": (vals > 0.0).sum(axis=1),
        "sum_at_t": vals.sum(axis=1),
        "values_at_t": vals,
        "seeds": seeds,
    }


def reconstruct_field(spec: DriftSpec, x_max: float, cfg: DeltaQConfig,
                      grid: TimeGrid, stream: NoiseStream):
    """Rebuild one interacting field realization from tilted excursion atoms.

    Atoms are processed in increasing mass coordinate; each atom's path is
    grown with drift F evaluated against the accumulated field strictly
    below its coordinate (frozen at the atom's arrival). Returns a MassField
    over the atom coordinates (with a trailing zero increment up to x_max).
    """
    from .coupling import MassField

    if not x_max > 0:
        raise ValueError(f"x_max must be positive, got {x_max}")
    if cfg.delta >= grid.horizon:
        raise ValueError(f"delta={cfg.delta} must be below the horizon {grid.horizon}")
    birth_idx = grid.index_of(cfg.delta)
    rng = stream.child("atoms").generator()
    count = int(rng.poisson(x_max * cfg.rate_per_mass))
    xis = np.sort(rng.uniform(0.0, x_max, count))
    seeds = rng.exponential(cfg.seed_mean, count)
    dt, sdt = grid.dt, np.sqrt(grid.dt)
    acc = np.zeros(grid.n_steps + 1)
    increments = []
    for i in range(count):
        g = stream.child("path", i).generator().standard_normal(grid.n_steps - birth_idx)
        values = np.zeros(grid.n_steps + 1)
        u = float(seeds[i])
        values[birth_idx] = u
        for j, k in enumerate(range(birth_idx, grid.n_steps)):
            f_inc = float(spec.evaluate(acc[k] + u) - spec.evaluate(acc[k]))
            u = max(0.0, u + f_inc * dt + 2.0 * np.sqrt(u) * sdt * g[j])
            values[k + 1] = u
            if u == 0.0:
                break
        acc = acc + values
        increments.append(SamplePath.from_values(grid, values))
    # degenerate duplicate coordinates are a measure-zero event; nudge if hit
    x_levels = [0.0]
    for xi in xis:
        x_levels.append(xi if xi > x_levels[-1] else np.nextafter(x_levels[-1], np.inf))
    if not increments or x_levels[-1] < x_max:
        x_levels.append(max(x_max, np.nextafter(x_levels[-1], np.inf)))
        increments.append(SamplePath.constant(grid, 0.0))
    return MassField(np.array(x_levels), increments)


def batch_reconstruct_endpoints(spec: DriftSpec, x_max: float, cfg: DeltaQConfig,
                                t: float, dt: float, stream: NoiseStream,
                                n_rep: int, chunk: int = 2500) -> np.ndarray:
    """Top-level values at t of n_rep reconstructed fields (vectorized).

    Within a replicate, atoms are processed in increasing mass coordinate;
    only the order matters for the dynamics, so the sorted uniform
    coordinates are realized implicitly. Replicates are split into fixed
    chunks to bound memory.
    """
    birth_idx = int(round(cfg.delta / dt))
    n_steps = int(round(t / dt))
    if abs(birth_idx * dt - cfg.delta) > 1e-9 or birth_idx < 1:
        raise ValueError(f"delta={cfg.delta} must be a positive multiple of dt={dt}")
    if birth_idx >= n_steps:
        raise ValueError("delta must be below the observation time")
    out = np.zeros(n_rep)
    start = 0
    chunk_id = 0
    sdt = np.sqrt(dt)
    while start < n_rep:
        size = min(chunk, n_rep - start)
        rng = stream.child("chunk", chunk_id).generator()
        counts = rng.poisson(x_max * cfg.rate_per_mass, size)
        k_max = int(counts.max()) if size else 0
        acc = np.zeros((size, n_steps + 1))
        for k in range(k_max):
            has_atom = counts > k
            seeds = np.where(has_atom, rng.exponential(cfg.seed_mean, size), 0.0)
            u = seeds
            atom = np.zeros((size, n_steps + 1))
            atom[:, birth_idx] = u
            for j in range(birth_idx, n_steps):
                base = acc[:, j]
                f_inc = spec.evaluate(base + u) - spec.evaluate(base)
                g = rng.standard_normal(size)
                u = np.maximum(0.0, u + f_inc * dt + (2.0 * sdt) * np.sqrt(u) * g)
                atom[:, j + 1] = u
            acc += atom
        out[start:start + size] = acc[:, -1]
        start += size
        chunk_id += 1
    return out


def pairing(g_vals: np.ndarray, path_values: np.ndarray, dt: float):
    """Left-endpoint quadrature of integral g(s) u(s) ds over the grid.

    path_values may be a single path (grid length) or a batch of paths with
    the grid along the last axis.
    """
    g_vals = np.asarray(g_vals, dtype=float)
    u = np.asarray(path_values, dtype=float)
    if g_vals.shape[-1] != u.shape[-1]:
        raise ValueError("g and the path must share the grid")
    out = np.sum(g_vals[:-1] * u[..., :-1], axis=-1) * dt
    return float(out) if out.ndim == 0 else out


def generator_applied(spec: DriftSpec, g_vals, z: SamplePath, cfg: DeltaQConfig,
                      n: int, stream: NoiseStream) -> McEstimate:
    """Monte Carlo estimate of the generator functional at the path z.

    Estimates Phi_g(z)/(2*delta) times the mean over n tilted delta-atoms of
    (exp(-<g, u>) - 1); atoms dying immediately contribute zero, which tames
    the sigma-finiteness of the underlying excursion measure.
    """
    g_vals = np.asarray(g_vals, dtype=float)
    if np.any(g_vals < 0):
        raise ValueError("g must be nonnegative")
    grid = z.grid
    if g_vals.shape != (grid.n_steps + 1,):
        raise ValueError("g must be given on the same grid as z")
    birth_idx = grid.index_of(cfg.delta)
    if birth_idx >= grid.n_steps:
        raise ValueError("delta must be below the grid horizon")
    dt, sdt = grid.dt, np.sqrt(grid.dt)
    rng = stream.generator()
    seeds = rng.exponential(cfg.seed_mean, n)
    u = seeds.copy()
    zv = z.values
    quad = np.zeros(n)
    for k in range(birth_idx, grid.n_steps):
        quad += g_vals[k] * u * dt
        f_inc = spec.evaluate(zv[k] + u) - spec.evaluate(zv[k])
        g = rng.standard_normal(n)
        u = np.maximum(0.0, u + f_inc * dt + (2.0 * sdt) * np.sqrt(u) * g)
    phi_g_z = np.exp(-pairing(g_vals, zv, dt))
    samples = phi_g_z * (np.expm1(-quad)) / (2.0 * cfg.delta)
    return McEstimate.from_samples(samples)

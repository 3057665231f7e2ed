"""Couplings of the population field across ancestral masses.

The field over an increasing mass grid is built from sequential conditional
increments: the increment above level x solves dV = F(Z_s, V) ds + 2 sqrt(V) dB
against the running cumulative path Z, with an independent noise sub-stream
per increment. This makes the path-valued field Markov in the mass
coordinate and keeps every cumulative level nondecreasing by construction.

The dyadic coupling steps each increment jointly with its dominating
supercritical counterpart: the nonnegative gap D between them is itself a
square-root diffusion with nonnegative drift, and the dominating increment
is reconstituted as increment + gap, so pathwise domination holds exactly,
not merely statistically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .drift import DriftSpec
from .paths import SamplePath, TimeGrid
from .streams import NoiseStream

__all__ = [
    "MassField",
    "JumpSet",
    "FieldBatch",
    "simulate_increment_conditional",
    "simulate_coupled_UV",
    "simulate_mass_field",
    "dyadic_coupled_field",
    "count_jumps",
    "check_nesting",
    "batch_increment_paths",
    "batch_field",
    "batch_dyadic_field",
]

DEFAULT_JUMP_ATOL = 1e-9


class MassField:
    """An increasing family of paths over a mass grid, stored as increments."""

    def __init__(self, x_grid, increments: list):
        x_grid = np.asarray(x_grid, dtype=float)
        if x_grid.ndim != 1 or x_grid.size < 1 or x_grid[0] != 0.0:
            raise ValueError("x_grid must be a 1-d array starting at 0")
        if np.any(np.diff(x_grid) <= 0):
            raise ValueError("x_grid must be strictly increasing")
        if len(increments) != x_grid.size - 1:
            raise ValueError("need exactly one increment path per consecutive grid pair")
        grids = {(p.grid.dt, p.grid.n_steps) for p in increments}
        if len(grids) > 1:
            raise ValueError("all increment paths must share one time grid")
        self.x_grid = x_grid
        self.x_grid.flags.writeable = False
        self.increments = list(increments)

    @property
    def n_levels(self) -> int:
        return len(self.increments)

    @property
    def grid(self) -> TimeGrid:
        if not self.increments:
            raise ValueError("empty field has no time grid")
        return self.increments[0].grid

    def cumulative(self, k: int, t: float) -> float:
        """Field value at mass level k (0..n_levels) and time t."""
        if not (0 <= k <= self.n_levels):
            raise ValueError(f"level {k} outside 0..{self.n_levels}")
        if k == 0:
            return 0.0
        j = self.grid.index_of(t)
        return float(sum(p.values[j] for p in self.increments[:k]))

    def cumulative_path(self, k: int) -> np.ndarray:
        """Values of the cumulative field at level k along the whole grid."""
        if k == 0:
            if not self.increments:
                raise ValueError("empty field has no time grid")
            return np.zeros(self.grid.n_steps + 1)
        return np.sum([p.values for p in self.increments[:k]], axis=0)

    def increment_values_at(self, t: float) -> np.ndarray:
        if not self.increments:
            return np.zeros(0)
        j = self.grid.index_of(t)
        return np.array([p.values[j] for p in self.increments])


@dataclass(frozen=True)
class JumpSet:
    """Mass levels whose increment is still alive at time t, with sizes."""

    t: float
    entries: tuple  # ((x-grid index, size), ...) with strictly increasing indices

    def __post_init__(self):
        idxs = [i for i, _ in self.entries]
        if any(s <= 0 for _, s in self.entries):
            raise ValueError("jump sizes must be positive")
        if any(b <= a for a, b in zip(idxs, idxs[1:])):
            raise ValueError("jump indices must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> tuple:
        return tuple(i for i, _ in self.entries)


def simulate_increment_conditional(spec: DriftSpec, z_path: SamplePath, y: float,
                                   grid: TimeGrid, stream: NoiseStream) -> SamplePath:
    """Conditional increment above the path z: dV = F(z_s, V) ds + 2 sqrt(V) dB.

    Driven by a fresh independent sub-stream; absorbed at its first zero
    (F(a, 0) = 0 makes zero a trap).
    """
    if y < 0:
        raise ValueError(f"initial increment must be nonnegative, got {y}")
    _check_compatible(z_path, grid)
    values = np.zeros(grid.n_steps + 1)
    values[0] = y
    if y == 0.0:
        return SamplePath(grid, values, absorbed_at=0)
    g = stream.generator().standard_normal(grid.n_steps)
    dt, sdt = grid.dt, np.sqrt(grid.dt)
    zv = z_path.values
    v = float(y)
    absorbed_at = None
    for k in range(grid.n_steps):
        f_inc = float(spec.evaluate(zv[k] + v) - spec.evaluate(zv[k]))
        v = max(0.0, v + f_inc * dt + 2.0 * np.sqrt(v) * sdt * g[k])
        values[k + 1] = v
        if v == 0.0:
            absorbed_at = k + 1
            break
    return SamplePath(grid, values, absorbed_at=absorbed_at)


def simulate_coupled_UV(spec: DriftSpec, z_path: SamplePath, y: float,
                        grid: TimeGrid, stream: NoiseStream):
    """The increment V and a driftless copy U sharing their lower-strip noise.

    With m = min(V, U), one common Gaussian drives the shared strip of width
    m and two further independent Gaussians drive the excess strips, so each
    marginal is a square-root diffusion while the pair stays maximally
    coupled. Returns (V, U).
    """
    if y < 0:
        raise ValueError(f"initial value must be nonnegative, got {y}")
    _check_compatible(z_path, grid)
    n = grid.n_steps
    vals_v = np.zeros(n + 1)
    vals_u = np.zeros(n + 1)
    vals_v[0] = vals_u[0] = y
    g = stream.generator().standard_normal((n, 3))
    dt, sdt = grid.dt, np.sqrt(grid.dt)
    zv = z_path.values
    v = u = float(y)
    for k in range(n):
        m = min(v, u)
        shared = np.sqrt(m) * g[k, 0]
        f_inc = float(spec.evaluate(zv[k] + v) - spec.evaluate(zv[k]))
        v_new = max(0.0, v + f_inc * dt + 2.0 * sdt * (shared + np.sqrt(v - m) * g[k, 1]))
        u_new = max(0.0, u + 2.0 * sdt * (shared + np.sqrt(u - m) * g[k, 2]))
        v, u = v_new, u_new
        vals_v[k + 1] = v
        vals_u[k + 1] = u
    return (SamplePath.from_values(grid, vals_v), SamplePath.from_values(grid, vals_u))


def simulate_mass_field(spec: DriftSpec, x_grid, grid: TimeGrid,
                        stream: NoiseStream) -> MassField:
    """Build the field over x_grid by sequential conditional increments."""
    x_grid = np.asarray(x_grid, dtype=float)
    increments = []
    cumulative = SamplePath.constant(grid, 0.0)
    cum_values = np.zeros(grid.n_steps + 1)
    for k in range(1, x_grid.size):
        y = float(x_grid[k] - x_grid[k - 1])
        inc = simulate_increment_conditional(
            spec, cumulative, y, grid, stream.child("increment", k))
        increments.append(inc)
        cum_values = cum_values + inc.values
        cumulative = SamplePath.from_values(grid, cum_values)
    return MassField(x_grid, increments)


def dyadic_coupled_field(spec: DriftSpec, x_grid, grid: TimeGrid,
                         stream: NoiseStream):
    """The interacting field coupled under a dominating supercritical field.

    Per increment, the gap D between the supercritical increment and the
    interacting increment is stepped as its own square-root diffusion with
    drift theta*(V + D) - F(base, V) >= 0, and the supercritical increment
    is reconstituted as V + D. Domination therefore holds at every grid
    point by construction. Returns (supercritical field, interacting field).
    """
    if not spec.passes_linear_growth:
        raise ValueError(f"drift {spec.label!r} failed the increment-growth condition")
    x_grid = np.asarray(x_grid, dtype=float)
    theta = spec.theta
    dt, sdt = grid.dt, np.sqrt(grid.dt)
    n = grid.n_steps
    incs_z, incs_y = [], []
    cum_values = np.zeros(n + 1)
    for k in range(1, x_grid.size):
        y0 = float(x_grid[k] - x_grid[k - 1])
        g = stream.child("increment", k).generator().standard_normal((n, 2))
        vals_v = np.zeros(n + 1)
        vals_d = np.zeros(n + 1)
        vals_v[0] = y0
        v, d = y0, 0.0
        for j in range(n):
            base = cum_values[j]
            f_inc = float(spec.evaluate(base + v) - spec.evaluate(base))
            v_new = max(0.0, v + f_inc * dt + 2.0 * sdt * np.sqrt(v) * g[j, 0])
            d_new = max(0.0, d + (theta * (v + d) - f_inc) * dt + 2.0 * sdt * np.sqrt(d) * g[j, 1])
            v, d = v_new, d_new
            vals_v[j + 1] = v
            vals_d[j + 1] = d
        incs_z.append(SamplePath.from_values(grid, vals_v))
        incs_y.append(SamplePath(grid, vals_v + vals_d))
        cum_values = cum_values + vals_v
    return (MassField(x_grid, incs_y), MassField(x_grid, incs_z))


def count_jumps(field: MassField, t: float, atol: float = DEFAULT_JUMP_ATOL) -> JumpSet:
    """Mass levels whose increment survives above atol at time t.

    Increments extinct before t are exactly zero under the absorption
    policy, so any atol below the smallest surviving excursion separates
    jumps from extinct mass exactly.
    """
    if not atol > 0:
        raise ValueError(f"atol must be positive, got {atol}")
    if field.n_levels == 0:
        return JumpSet(t=t, entries=())
    vals = field.increment_values_at(t)
    entries = tuple((k + 1, float(v)) for k, v in enumerate(vals) if v > atol)
    return JumpSet(t=t, entries=entries)


def check_nesting(field: MassField, s: float, t: float,
                  atol: float = DEFAULT_JUMP_ATOL) -> bool:
    """True iff every jump location at the later time is one at the earlier."""
    if not 0 < s < t:
        raise ValueError(f"need 0 < s < t, got s={s}, t={t}")
    later = set(count_jumps(field, t, atol).indices)
    earlier = set(count_jumps(field, s, atol).indices)
    return later.issubset(earlier)


def _check_compatible(z_path: SamplePath, grid: TimeGrid):
    if abs(z_path.grid.dt - grid.dt) > 1e-12 * grid.dt:
        raise ValueError("base path and target grid must share the same dt")
    if z_path.grid.n_steps < grid.n_steps:
        raise ValueError("base path must cover the target grid horizon")


# ---------------------------------------------------------------------------
# vectorized batch engines (replicates in parallel, increments sequential)

def batch_increment_paths(spec: DriftSpec, base_paths: np.ndarray, y, dt: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Full increment paths for a batch of replicates.

    base_paths has shape (R, n_steps+1) (or (1, n_steps+1) broadcast); y is
    a scalar or length-R array of initial increments. Returns (R, n_steps+1).
    """
    base_paths = np.atleast_2d(np.asarray(base_paths, dtype=float))
    n_rep = base_paths.shape[0]
    n_steps = base_paths.shape[1] - 1
    out = np.zeros((max(n_rep, np.size(y) if np.ndim(y) else 1), n_steps + 1))
    n_rows = out.shape[0]
    v = np.full(n_rows, 0.0) + np.asarray(y, dtype=float)
    out[:, 0] = v
    sdt = np.sqrt(dt)
    for k in range(n_steps):
        zk = base_paths[:, k] if base_paths.shape[0] == n_rows else base_paths[0, k]
        f_inc = spec.evaluate(zk + v) - spec.evaluate(zk)
        g = rng.standard_normal(n_rows)
        v = np.maximum(0.0, v + f_inc * dt + (2.0 * sdt) * np.sqrt(v) * g)
        out[:, k + 1] = v
    return out


@dataclass
class FieldBatch:
    """Snapshot summaries of a batch of simulated fields."""

    x_grid: np.ndarray
    snapshot_times: tuple
    increment_snapshots: np.ndarray   # (n_levels, n_rep, n_snapshots)
    cumulative_snapshots: np.ndarray  # (n_rep, n_snapshots), top level


def batch_field(spec: DriftSpec, x_grid, snapshot_times, dt: float, n_steps: int,
                rng: np.random.Generator, n_rep: int) -> FieldBatch:
    """Simulate n_rep independent fields, recording increment values at the
    snapshot times and the top-level cumulative values."""
    x_grid = np.asarray(x_grid, dtype=float)
    snap_idx = [int(round(s / dt)) for s in snapshot_times]
    for s, j in zip(snapshot_times, snap_idx):
        if abs(j * dt - s) > 1e-9 or j > n_steps:
            raise ValueError(f"snapshot time {s} is not on the grid")
    n_levels = x_grid.size - 1
    inc_snaps = np.zeros((n_levels, n_rep, len(snap_idx)))
    cum = np.zeros((n_rep, n_steps + 1))
    for k in range(n_levels):
        y = float(x_grid[k + 1] - x_grid[k])
        paths = batch_increment_paths(spec, cum, y, dt, rng)
        inc_snaps[k] = paths[:, snap_idx]
        cum += paths
    return FieldBatch(
        x_grid=x_grid,
        snapshot_times=tuple(snapshot_times),
        increment_snapshots=inc_snaps,
        cumulative_snapshots=cum[:, snap_idx],
    )


def batch_dyadic_field(spec: DriftSpec, x_grid, t: float, dt: float,
                       rng: np.random.Generator, n_rep: int) -> dict:
    """Batch dyadic coupling; returns endpoint values and the worst
    domination violation over all grid points (exactly <= 0 by scheme
    construction, recomputed here as an honest check)."""
    if not spec.passes_linear_growth:
        raise ValueError(f"drift {spec.label!r} failed the increment-growth condition")
    x_grid = np.asarray(x_grid, dtype=float)
    theta = spec.theta
    n_steps = int(round(t / dt))
    if abs(n_steps * dt - t) > 1e-9:
        raise ValueError(f"t={t} must be a multiple of dt={dt}")
    sdt = np.sqrt(dt)
    n_levels = x_grid.size - 1
    cum = np.zeros((n_rep, n_steps + 1))
    cum_gap = np.zeros((n_rep, n_steps + 1))
    worst_violation = -np.inf
    inc_z_t = np.zeros((n_levels, n_rep))
    inc_y_t = np.zeros((n_levels, n_rep))
    for k in range(n_levels):
        y0 = float(x_grid[k + 1] - x_grid[k])
        v = np.full(n_rep, y0)
        d = np.zeros(n_rep)
        v_path = np.zeros((n_rep, n_steps + 1))
        d_path = np.zeros((n_rep, n_steps + 1))
        v_path[:, 0] = v
        for j in range(n_steps):
            base = cum[:, j]
            f_inc = spec.evaluate(base + v) - spec.evaluate(base)
            g1 = rng.standard_normal(n_rep)
            g2 = rng.standard_normal(n_rep)
            v = np.maximum(0.0, v + f_inc * dt + (2.0 * sdt) * np.sqrt(v) * g1)
            d = np.maximum(0.0, d + (theta * (v_path[:, j] + d) - f_inc) * dt
                           + (2.0 * sdt) * np.sqrt(d) * g2)
            v_path[:, j + 1] = v
            d_path[:, j + 1] = d
        worst_violation = max(worst_violation, float(np.max(-d_path)))
        inc_z_t[k] = v_path[:, -1]
        inc_y_t[k] = v_path[:, -1] + d_path[:, -1]
        cum += v_path
        cum_gap += d_path
    return {
        "x_grid": x_grid,
        "z_top_at_t": cum[:, -1],
        "y_top_at_t": cum[:, -1] + cum_gap[:, -1],
        "increment_z_at_t": inc_z_t,
        "increment_y_at_t": inc_y_t,
        "max_increment_violation": worst_violation,
        "max_total_violation": float(np.max(cum[:, -1] - (cum[:, -1] + cum_gap[:, -1]))),
    }

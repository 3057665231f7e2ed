"""Statistical verification harness.

Conditional-expectation structure is tested through orthogonality: a
martingale increment must have zero mean and zero covariance against a
fixed family of statistics measurable at the conditioning level. All
3-standard-error criteria are two-sided unless the claim itself is a
one-sided bound.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .coupling import batch_dyadic_field, batch_increment_paths
from .drift import DriftSpec
from .excursions import DeltaQConfig, pairing
from .mc import McEstimate, TestReport
from .streams import NoiseStream

__all__ = [
    "ks_two_sample",
    "ks_critical_value",
    "martingale_test_M",
    "generator_martingale_test",
    "riemann_convergence",
    "expectation_bound_suite",
]


def ks_critical_value(n: int, m: int, level: float) -> float:
    """Asymptotic two-sample KS critical value at the given level."""
    c = np.sqrt(-0.5 * np.log(level / 2.0))
    return float(c * np.sqrt((n + m) / (n * m)))


def ks_two_sample(a, b, level: float = 0.01, name: str = "ks_two_sample",
                  params: dict | None = None, seed=None) -> TestReport:
    """Standard two-sample Kolmogorov-Smirnov decision at the given level."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    statistic = float(stats.ks_2samp(a, b, method="asymp").statistic)
    threshold = ks_critical_value(a.size, b.size, level)
    return TestReport(
        name=name,
        params={**(params or {}), "n_a": int(a.size), "n_b": int(b.size), "level": level},
        statistic=statistic, threshold=threshold,
        passed=bool(statistic <= threshold),
        diagnostics={"mean_a": float(a.mean()), "mean_b": float(b.mean())},
        seed=seed,
    )


def _inner_phi_means(spec: DriftSpec, z_paths: np.ndarray, t_idx: int, dt: float,
                     n_inner: int, rng: np.random.Generator):
    """Per-row inner means of the weight L_t(z_i, U) over zero-start
    immigration paths; one fresh inner sample matrix per call."""
    n_rows = z_paths.shape[0]
    u = np.zeros((n_rows, n_inner))
    logl = np.zeros((n_rows, n_inner))
    sdt = np.sqrt(dt)
    holder_max_sq = 0.0
    for k in range(t_idx):
        zk = z_paths[:, k:k + 1]
        pos = u > 0.0
        f_inc = spec.evaluate(zk + u) - spec.evaluate(zk)
        inv = np.zeros_like(u)
        np.divide(1.0, u, out=inv, where=pos)
        ratio = f_inc * inv
        quad = f_inc * ratio
        hm = float(np.max(quad * (u <= 1.0), initial=0.0))
        if hm > holder_max_sq:
            holder_max_sq = hm
        g = rng.standard_normal(u.shape)
        u_next = np.maximum(0.0, u + 4.0 * dt + (2.0 * sdt) * np.sqrt(u) * g)
        logl += 0.25 * ratio * (u_next - u) - 0.125 * dt * quad
        u = u_next
    _holder_assert(spec, z_paths, holder_max_sq)
    w = np.exp(logl)
    return w.mean(axis=1), w.std(ddof=1, axis=1) / np.sqrt(n_inner)


def _holder_assert(spec: DriftSpec, z_vals: np.ndarray, holder_max_sq: float):
    m_bound = float(np.max(z_vals)) if z_vals.size else 0.0
    c_m = float(spec.holder_constant(m_bound))
    if holder_max_sq > c_m * c_m * (1.0 + 1e-9) + 1e-12:
        raise AssertionError(
            f"Hoelder control violated: max F^2/U = {holder_max_sq:.6g} exceeds "
            f"C_M^2 = {c_m * c_m:.6g} for M = {m_bound:.6g}; the drift spec is bad"
        )


def _orthogonality_clauses(m_inc: np.ndarray, statistics: dict) -> dict:
    """Zero-mean and zero-covariance clause summaries for one martingale test."""
    n = m_inc.size
    mean = float(m_inc.mean())
    se = float(m_inc.std(ddof=1) / np.sqrt(n))
    clauses = {"mean": {"value": mean, "se": se, "ratio": abs(mean) / se if se else 0.0}}
    dm = m_inc - mean
    for label, s_vals in statistics.items():
        ds = s_vals - s_vals.mean()
        prod = dm * ds
        cov = float(prod.mean())
        cov_se = float(prod.std(ddof=1) / np.sqrt(n))
        clauses[f"cov_{label}"] = {
            "value": cov, "se": cov_se,
            "ratio": abs(cov) / cov_se if cov_se else 0.0,
        }
    return clauses


def martingale_test_M(spec: DriftSpec, x_grid, a_index: int, t: float,
                      n_outer: int, n_inner: int, stream: NoiseStream,
                      dt: float = 5e-3) -> TestReport:
    """Martingale property in the mass coordinate of the compensated field.

    Per field replicate the compensator is the mass-grid Riemann sum of
    inner Monte Carlo means of L_t(field path at the cell's left edge, U)
    over zero-start immigration samples. Tests (i) zero mean of the
    increment between levels a and x and (ii) zero covariance against
    statistics measurable below a (the level-a value and the count of
    sub-a increments alive at t).
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if not (0 < a_index < x_grid.size - 1):
        raise ValueError("a_index must point strictly inside the mass grid")
    t_idx = int(round(t / dt))
    if abs(t_idx * dt - t) > 1e-9:
        raise ValueError(f"t={t} must be a multiple of dt={dt}")

    cum = np.zeros((n_outer, t_idx + 1))
    z_a_t = None
    alive_below_a = np.zeros(n_outer)
    compensator = np.zeros(n_outer)
    inner_se_sq = np.zeros(n_outer)
    for k in range(1, x_grid.size):
        y_k = float(x_grid[k] - x_grid[k - 1])
        if k > a_index:
            means, ses = _inner_phi_means(
                spec, cum, t_idx, dt, n_inner,
                stream.child("inner", k).generator())
            compensator += y_k * means
            inner_se_sq += (y_k * ses) ** 2
        paths = batch_increment_paths(
            spec, cum, y_k, dt, stream.child("field", k).generator())
        cum += paths
        if k <= a_index:
            alive_below_a += (paths[:, -1] > 0.0)
        if k == a_index:
            z_a_t = cum[:, -1].copy()

    m_inc = (cum[:, -1] - z_a_t) - compensator
    clauses = _orthogonality_clauses(
        m_inc, {"Z_a": z_a_t, "alive_below_a": alive_below_a})
    worst = max(c["ratio"] for c in clauses.values())
    return TestReport(
        name="martingale_field",
        params={"drift": spec.label, "x": float(x_grid[-1]), "a": float(x_grid[a_index]),
                "t": t, "dt": dt, "n_outer": n_outer, "n_inner": n_inner,
                "n_levels": int(x_grid.size - 1)},
        statistic=float(worst), threshold=3.0,
        passed=bool(worst <= 3.0),
        diagnostics={"clauses": clauses,
                     "mean_inner_se": float(np.sqrt(inner_se_sq.mean()))},
        seed=str(stream.path),
    )


def _inner_generator_means(spec: DriftSpec, z_paths: np.ndarray, g_vals: np.ndarray,
                           cfg: DeltaQConfig, dt: float, n_inner: int,
                           rng: np.random.Generator):
    """Per-row generator-functional estimates from tilted delta-slice atoms."""
    n_rows, n_cols = z_paths.shape
    n_steps = n_cols - 1
    birth_idx = int(round(cfg.delta / dt))
    seeds = rng.exponential(cfg.seed_mean, (n_rows, n_inner))
    u = seeds.copy()
    quad = np.zeros_like(u)
    sdt = np.sqrt(dt)
    for k in range(birth_idx, n_steps):
        quad += g_vals[k] * u * dt
        zk = z_paths[:, k:k + 1]
        f_inc = spec.evaluate(zk + u) - spec.evaluate(zk)
        g = rng.standard_normal(u.shape)
        u = np.maximum(0.0, u + f_inc * dt + (2.0 * sdt) * np.sqrt(u) * g)
    phi_z = np.exp(-pairing(g_vals, z_paths, dt))
    vals = np.expm1(-quad) / (2.0 * cfg.delta)
    return phi_z * vals.mean(axis=1), np.abs(phi_z) * vals.std(ddof=1, axis=1) / np.sqrt(n_inner)


def generator_martingale_test(spec: DriftSpec, g_vals, x_grid, a_index: int,
                              cfg: DeltaQConfig, n_outer: int, n_inner: int,
                              stream: NoiseStream, dt: float) -> TestReport:
    """Martingale property of the generator-compensated exponential functional.

    Per field replicate computes Phi_g at the top level minus Phi_g at level
    a minus the mass Riemann sum of generator estimates at the cells' left
    edges; tests zero mean and orthogonality against level-a statistics.
    """
    g_vals = np.asarray(g_vals, dtype=float)
    if np.any(g_vals < 0):
        raise ValueError("g must be nonnegative")
    x_grid = np.asarray(x_grid, dtype=float)
    if not (0 < a_index < x_grid.size - 1):
        raise ValueError("a_index must point strictly inside the mass grid")
    n_steps = g_vals.size - 1

    cum = np.zeros((n_outer, n_steps + 1))
    compensator = np.zeros(n_outer)
    phi_a = None
    z_a_t = None
    for k in range(1, x_grid.size):
        y_k = float(x_grid[k] - x_grid[k - 1])
        if k > a_index:
            means, _ = _inner_generator_means(
                spec, cum, g_vals, cfg, dt, n_inner,
                stream.child("inner", k).generator())
            compensator += y_k * means
        paths = batch_increment_paths(
            spec, cum, y_k, dt, stream.child("field", k).generator())
        cum += paths
        if k == a_index:
            phi_a = np.exp(-pairing(g_vals, cum, dt))
            z_a_t = cum[:, -1].copy()

    phi_top = np.exp(-pairing(g_vals, cum, dt))
    m_inc = phi_top - phi_a - compensator
    clauses = _orthogonality_clauses(m_inc, {"phi_a": phi_a, "Z_a": z_a_t})
    worst = max(c["ratio"] for c in clauses.values())
    return TestReport(
        name="martingale_generator",
        params={"drift": spec.label, "x": float(x_grid[-1]), "a": float(x_grid[a_index]),
                "horizon": n_steps * dt, "dt": dt, "delta": cfg.delta,
                "n_outer": n_outer, "n_inner": n_inner},
        statistic=float(worst), threshold=3.0,
        passed=bool(worst <= 3.0),
        diagnostics={"clauses": clauses},
        seed=str(stream.path),
    )


def riemann_convergence(spec: DriftSpec, x: float, t: float, dxs, n: int,
                        stream: NoiseStream, dt: float = 1e-3) -> TestReport:
    """Mass-grid Riemann sums of inner weight integrals across refinements.

    One field realization is simulated on the finest grid and held fixed;
    each refinement level computes its Riemann sum with inner samples
    started at the cell width, and the reference uses the finest grid with
    zero-start inner samples. The absolute gaps to the reference must be
    non-increasing in trend; with no interaction every sum equals x exactly.
    """
    dxs = sorted(float(d) for d in dxs)[::-1]  # coarse to fine
    if len(dxs) < 2:
        return TestReport(
            name="riemann_refinement",
            params={"drift": spec.label, "x": x, "t": t, "dxs": list(dxs)},
            statistic=float("nan"), threshold=float("nan"), passed=None,
            diagnostics={"note": "insufficient levels"}, seed=str(stream.path),
        )
    dx_fine = dxs[-1]
    n_cells_fine = int(round(x / dx_fine))
    if abs(n_cells_fine * dx_fine - x) > 1e-9:
        raise ValueError("x must be a multiple of the finest cell width")
    for d in dxs:
        ratio = d / dx_fine
        if abs(round(ratio) - ratio) > 1e-9:
            raise ValueError("all cell widths must be multiples of the finest")
    t_idx = int(round(t / dt))
    if abs(t_idx * dt - t) > 1e-9:
        raise ValueError(f"t={t} must be a multiple of dt={dt}")

    # one fixed field realization on the finest grid (single replicate)
    levels = [np.zeros((1, t_idx + 1))]
    cum = np.zeros((1, t_idx + 1))
    for k in range(n_cells_fine):
        paths = batch_increment_paths(
            spec, cum, dx_fine, dt, stream.child("field", k + 1).generator())
        cum = cum + paths
        levels.append(cum.copy())

    def _sum_at(dx: float, y_inner: float, key: str):
        stride = int(round(dx / dx_fine))
        total, var = 0.0, 0.0
        for j, k in enumerate(range(0, n_cells_fine, stride)):
            z_row = levels[k]
            mean, se = _inner_weight_mean(
                spec, z_row[0], y_inner, t_idx, dt, n,
                stream.child(key, j).generator())
            total += dx * mean
            var += (dx * se) ** 2
        return total, np.sqrt(var)

    ref, ref_se = _sum_at(dx_fine, 0.0, "ref")
    sums, gaps, gap_ses = [], [], []
    for i, dx in enumerate(dxs):
        s, se = _sum_at(dx, dx, f"level{i}")
        sums.append(s)
        gaps.append(abs(s - ref))
        gap_ses.append(np.hypot(se, ref_se))

    monotone = all(
        gaps[i + 1] <= gaps[i] + 3.0 * np.hypot(gap_ses[i], gap_ses[i + 1])
        for i in range(len(gaps) - 1)
    )
    statistic = gaps[-1] - gaps[0]
    return TestReport(
        name="riemann_refinement",
        params={"drift": spec.label, "x": x, "t": t, "dxs": list(dxs),
                "n_inner": n, "dt": dt},
        statistic=float(statistic), threshold=0.0,
        passed=bool(monotone and gaps[-1] <= gaps[0] + 3.0 * np.hypot(gap_ses[0], gap_ses[-1])),
        diagnostics={"sums": sums, "reference": ref, "gaps": gaps,
                     "gap_ses": gap_ses},
        seed=str(stream.path),
    )


def _inner_weight_mean(spec: DriftSpec, z_vals: np.ndarray, y: float, t_idx: int,
                       dt: float, n: int, rng: np.random.Generator):
    """Inner mean of L_t(z, U) over immigration paths started at y."""
    u = np.full(n, float(y))
    logl = np.zeros(n)
    sdt = np.sqrt(dt)
    holder_max_sq = 0.0
    for k in range(t_idx):
        zk = float(z_vals[k])
        pos = u > 0.0
        f_inc = spec.evaluate(zk + u) - spec.evaluate(zk)
        inv = np.zeros_like(u)
        np.divide(1.0, u, out=inv, where=pos)
        ratio = f_inc * inv
        quad = f_inc * ratio
        hm = float(np.max(quad * (u <= 1.0), initial=0.0))
        if hm > holder_max_sq:
            holder_max_sq = hm
        g = rng.standard_normal(n)
        u_next = np.maximum(0.0, u + 4.0 * dt + (2.0 * sdt) * np.sqrt(u) * g)
        logl += 0.25 * ratio * (u_next - u) - 0.125 * dt * quad
        u = u_next
    _holder_assert(spec, z_vals[:t_idx], holder_max_sq)
    w = np.exp(logl)
    return float(w.mean()), float(w.std(ddof=1) / np.sqrt(n))


def expectation_bound_suite(spec: DriftSpec, x: float, y: float, t: float, n: int,
                            stream: NoiseStream, dt: float = 1e-3) -> TestReport:
    """Mean-increment growth bound and exact pathwise dominations.

    The mean of the conditional increment at t must stay below y*exp(theta*t)
    (one-sided, statistically; equality for a linear drift). The dyadic
    coupling must show zero pathwise domination violations at every grid
    point of every replicate.
    """
    t_idx = int(round(t / dt))
    if abs(t_idx * dt - t) > 1e-9:
        raise ValueError(f"t={t} must be a multiple of dt={dt}")
    base = batch_increment_paths(
        spec, np.zeros((n, t_idx + 1)), x, dt, stream.child("base").generator())
    inc = batch_increment_paths(
        spec, base, y, dt, stream.child("increment").generator())
    est = McEstimate.from_samples(inc[:, -1])
    bound = y * np.exp(spec.theta * t)
    mean_ratio = (est.mean - bound) / est.standard_error if est.standard_error else 0.0
    mean_ok = est.mean <= bound + 3.0 * est.standard_error
    if spec.kind == "linear":
        mean_ok = abs(est.mean - bound) <= 3.0 * est.standard_error

    dyadic = batch_dyadic_field(
        spec, np.linspace(0.0, x, 9), t, dt,
        stream.child("dyadic").generator(), max(64, n // 32))
    domination_ok = (dyadic["max_increment_violation"] <= 0.0
                     and dyadic["max_total_violation"] <= 0.0)

    passed = bool(mean_ok and domination_ok)
    return TestReport(
        name="increment_bound",
        params={"drift": spec.label, "x": x, "y": y, "t": t, "n": n, "dt": dt},
        statistic=float(mean_ratio), threshold=3.0, passed=passed,
        diagnostics={
            "increment_mean": est.to_dict(),
            "growth_bound": float(bound),
            "max_increment_violation": dyadic["max_increment_violation"],
            "max_total_violation": dyadic["max_total_violation"],
        },
        seed=str(stream.path),
    )

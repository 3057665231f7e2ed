"""Interaction drift functions and their admissibility checks.

A drift f must vanish at 0, have increments bounded by theta*b (linear
growth of increments), be 1/2-Hoelder in its second argument on compacts,
and force almost-sure extinction of the population (an integral condition
that can only be probed heuristically).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

__all__ = [
    "DriftSpec",
    "ValidationReport",
    "make_drift",
    "drift_from_string",
    "drift_to_record",
    "drift_from_record",
    "validate_drift",
    "F_increment",
]

# Exact algebraic inequalities for smooth drifts; tolerance only absorbs
# floating-point error.
PROBE_RTOL = 1e-12

# Finite bound for the heuristic extinction-integral probe.
EXTINCTION_PROBE_BOUND = 1e6


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """An interaction drift with its admissibility constants.

    ``evaluate`` is vectorized (accepts scalars or arrays of population
    sizes). ``holder_constant`` maps a bound M to the constant C_M governing
    |f(a+b)-f(a)| <= C_M*sqrt(b) for a in [0,M], b in (0,1].
    ``passes_linear_growth`` is frozen at construction: built-in kinds are
    certified analytically, custom drifts are probed once.
    """

    kind: str
    params: tuple
    theta: float
    label: str
    evaluate: Callable = field(repr=False)
    holder_constant: Callable[[float], float] = field(repr=False)
    passes_linear_growth: bool = True

    def __call__(self, z):
        return self.evaluate(z)


def F_increment(spec: DriftSpec, a, b):
    """Drift increment f(a+b) - f(a); exactly zero when b == 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("F_increment requires a, b >= 0")
    out = spec.evaluate(a + b) - spec.evaluate(a)
    if out.ndim == 0:
        return float(out)
    return out


def _F(spec: DriftSpec, a, b):
    """Unchecked increment for hot loops."""
    return spec.evaluate(a + b) - spec.evaluate(a)


def _probe_linear_growth(evaluate, theta, M=10.0, n_probe=256, seed=0) -> bool:
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, M, n_probe)
    b = rng.uniform(1e-6, M, n_probe)
    lhs = evaluate(a + b) - evaluate(a)
    return bool(np.all(lhs <= theta * b + PROBE_RTOL * (1.0 + np.abs(theta * b))))


def make_drift(kind: str, params=(), *, evaluate=None, theta=None,
               holder_constant=None, label=None) -> DriftSpec:
    """Construct a drift of a built-in kind, or wrap a custom function.

    Built-in kinds compute the tightest increment-growth constant and an
    analytic Hoelder constant. ``custom`` requires the caller to supply
    ``evaluate`` (vectorized), ``theta`` and ``holder_constant``.
    """
    params = tuple(float(p) for p in params)
    if kind == "linear":
        if len(params) != 1:
            raise ValueError("linear drift takes one parameter (theta)")
        (th,) = params
        if th < 0:
            raise ValueError(f"linear drift needs theta >= 0, got {th}")

        def f_lin(z, th=th):
            return th * np.asarray(z, dtype=float)

        return DriftSpec(
            kind="linear", params=params, theta=th,
            label=label or f"linear(theta={th:g})",
            evaluate=f_lin,
            holder_constant=lambda M, th=th: th,
        )
    if kind == "logistic":
        if len(params) != 2:
            raise ValueError("logistic drift takes two parameters (theta, gamma)")
        th, gam = params
        if th < 0 or gam < 0:
            raise ValueError(f"logistic drift needs theta >= 0 and gamma >= 0, got {params}")

        def f_log(z, th=th, gam=gam):
            z = np.asarray(z, dtype=float)
            return th * z - gam * z * z

        return DriftSpec(
            kind="logistic", params=params, theta=th,
            label=label or f"logistic(theta={th:g}, gamma={gam:g})",
            evaluate=f_log,
            holder_constant=lambda M, th=th, gam=gam: th + 2.0 * gam * M + gam,
        )
    if kind == "allee":
        if len(params) != 3:
            raise ValueError("allee drift takes three parameters (rate, threshold, capacity)")
        rate, lo, hi = params
        if not (rate > 0 and 0 < lo < hi):
            raise ValueError(f"allee drift needs rate > 0 and 0 < threshold < capacity, got {params}")

        def f_allee(z, rate=rate, lo=lo, hi=hi):
            z = np.asarray(z, dtype=float)
            return rate * z * (z / lo - 1.0) * (1.0 - z / hi)

        def df(z):
            # derivative of the cubic; concave quadratic, peak at (lo+hi)/3
            return rate * (-3.0 * z * z / (lo * hi) + 2.0 * z * (1.0 / lo + 1.0 / hi) - 1.0)

        z_peak = (lo + hi) / 3.0
        theta_allee = max(0.0, df(z_peak))

        def c_allee(M, df=df, z_peak=z_peak):
            # Lipschitz bound on [0, M+1]; |f(a+b)-f(a)| <= L*b <= L*sqrt(b) for b <= 1
            cands = [abs(df(0.0)), abs(df(M + 1.0))]
            if 0.0 <= z_peak <= M + 1.0:
                cands.append(abs(df(z_peak)))
            return max(cands)

        return DriftSpec(
            kind="allee", params=params, theta=theta_allee,
            label=label or f"allee(rate={rate:g}, threshold={lo:g}, capacity={hi:g})",
            evaluate=f_allee,
            holder_constant=c_allee,
        )
    if kind == "custom":
        if evaluate is None or theta is None or holder_constant is None:
            raise ValueError("custom drift requires evaluate, theta and holder_constant")
        if float(np.asarray(evaluate(0.0))) != 0.0:
            raise ValueError("drift must satisfy f(0) = 0 exactly")
        if np.isscalar(holder_constant) or isinstance(holder_constant, (int, float)):
            c_val = float(holder_constant)
            holder_constant = lambda M, c=c_val: c
        ok = _probe_linear_growth(evaluate, float(theta))
        return DriftSpec(
            kind="custom", params=params, theta=float(theta),
            label=label or "custom",
            evaluate=evaluate, holder_constant=holder_constant,
            passes_linear_growth=ok,
        )
    raise ValueError(f"unknown drift kind {kind!r}")


def drift_from_string(text: str) -> DriftSpec:
    """Parse 'kind:p1:p2:...' (e.g. 'logistic:1:0.5') into a built-in drift."""
    parts = text.strip().split(":")
    kind, raw = parts[0], parts[1:]
    if kind == "custom":
        raise ValueError("custom drifts cannot be built from a config string")
    return make_drift(kind, tuple(float(p) for p in raw))


def drift_to_record(spec: DriftSpec) -> dict:
    """Flat record (kind, params, theta) for the experiment config file."""
    if spec.kind == "custom":
        raise ValueError("custom drifts are not serializable")
    return {
        "kind": spec.kind,
        "params": ",".join(f"{p:g}" for p in spec.params),
        "theta": spec.theta,
    }


def drift_from_record(record: dict) -> DriftSpec:
    params = tuple(float(p) for p in str(record["params"]).split(",") if p != "")
    return make_drift(str(record["kind"]), params)


@dataclass(frozen=True)
class ValidationReport:
    """Per-condition admissibility flags for one drift.

    The extinction-integral flag is a heuristic verdict from a finite
    integration bound, never a proof; ``f_eventually_below_2`` is the
    separate informational flag for the simple sufficient condition.
    """

    label: str
    linear_growth_ok: bool
    holder_ok: bool
    extinction_heuristic_ok: bool
    linear_growth_margin: float
    holder_margin: float
    extinction_slope: float
    extinction_bound: float
    f_eventually_below_2: bool
    M: float
    n_probe: int
    seed: int

    @property
    def exact_conditions_ok(self) -> bool:
        return self.linear_growth_ok and self.holder_ok

    @property
    def all_ok(self) -> bool:
        return self.exact_conditions_ok and self.extinction_heuristic_ok

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "linear_growth_ok": self.linear_growth_ok,
            "holder_ok": self.holder_ok,
            "extinction_heuristic_ok": self.extinction_heuristic_ok,
            "extinction_note": ("heuristic: integrand log-slope "
                                f"{self.extinction_slope:.4g} at bound {self.extinction_bound:g}"),
            "linear_growth_margin": self.linear_growth_margin,
            "holder_margin": self.holder_margin,
            "f_eventually_below_2": self.f_eventually_below_2,
            "M": self.M,
            "n_probe": self.n_probe,
            "seed": self.seed,
        }


def validate_drift(spec: DriftSpec, M: float = 10.0, n_probe: int = 4096,
                   seed: int = 0) -> ValidationReport:
    """Probe the three admissibility conditions on random increments.

    The increment-growth and Hoelder conditions are checked on ``n_probe``
    random (a, b) pairs with relative tolerance ``PROBE_RTOL``. The
    extinction integral is probed up to a finite bound: the outer integrand
    exp(-I(u)/2) is computed in log space and the integral diverges iff the
    integrand decays no faster than 1/u, i.e. iff its log-log slope stays
    >= -1. Failures are report entries, not faults.
    """
    if not M > 0:
        raise ValueError(f"M must be positive, got {M}")
    if n_probe < 1:
        raise ValueError(f"n_probe must be >= 1, got {n_probe}")
    rng = np.random.default_rng(seed)

    a12 = rng.uniform(0.0, M, n_probe)
    b12 = rng.uniform(1e-9, M, n_probe)
    gap12 = _F(spec, a12, b12) - spec.theta * b12
    tol12 = PROBE_RTOL * (1.0 + np.abs(spec.theta * b12))
    margin12 = float(np.max(gap12))
    ok12 = bool(np.all(gap12 <= tol12))

    c_m = spec.holder_constant(M)
    a13 = rng.uniform(0.0, M, n_probe)
    b13 = rng.uniform(1e-12, 1.0, n_probe)
    gap13 = np.abs(_F(spec, a13, b13)) - c_m * np.sqrt(b13)
    margin13 = float(np.max(gap13))
    ok13 = bool(np.all(gap13 <= PROBE_RTOL * (1.0 + c_m)))

    # inner integral I(u) = int_1^u f(r)/r dr via r = e^s
    s = np.linspace(0.0, np.log(EXTINCTION_PROBE_BOUND), 4001)
    fu = spec.evaluate(np.exp(s))
    inner = cumulative_trapezoid(fu, s, initial=0.0)
    log_integrand = -0.5 * inner
    # slope of log-integrand against log(u) over the last decade
    decade = s >= s[-1] - np.log(10.0)
    slope = float(np.polyfit(s[decade], log_integrand[decade], 1)[0])
    ok14 = slope >= -1.0 - 1e-3

    above = np.flatnonzero(fu > 2.0)
    eventually_below = above.size == 0 or above[-1] < len(s) - 1

    return ValidationReport(
        label=spec.label,
        linear_growth_ok=ok12,
        holder_ok=ok13,
        extinction_heuristic_ok=bool(ok14),
        linear_growth_margin=margin12,
        holder_margin=margin13,
        extinction_slope=slope,
        extinction_bound=EXTINCTION_PROBE_BOUND,
        f_eventually_below_2=bool(eventually_below),
        M=M,
        n_probe=n_probe,
        seed=seed,
    )

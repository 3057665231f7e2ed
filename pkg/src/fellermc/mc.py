"""Monte Carlo estimates, agreement criteria and test reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

__all__ = ["McEstimate", "TestReport", "agree", "agreement_gap"]


@dataclass(frozen=True)
class McEstimate:
    """Sample-mean estimator with its standard error and confidence interval."""

    mean: float
    standard_error: float
    n: int
    confidence_level: float = 0.99

    @property
    def interval(self) -> tuple:
        z = norm.ppf(0.5 * (1.0 + self.confidence_level))
        return (self.mean - z * self.standard_error, self.mean + z * self.standard_error)

    @classmethod
    def from_samples(cls, samples, confidence_level: float = 0.99) -> "McEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        if n == 0:
            raise ValueError("cannot estimate from an empty sample")
        se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
        return cls(mean=float(samples.mean()), standard_error=se, n=n,
                   confidence_level=confidence_level)

    def to_dict(self) -> dict:
        lo, hi = self.interval
        return {
            "mean": self.mean,
            "se": self.standard_error,
            "n": self.n,
            "level": self.confidence_level,
            "interval": [lo, hi],
        }


def agreement_gap(a: McEstimate, b: McEstimate) -> float:
    """|mean difference| in units of the combined standard error."""
    denom = float(np.hypot(a.standard_error, b.standard_error))
    diff = abs(a.mean - b.mean)
    if denom == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / denom

def agree(a: McEstimate, b: McEstimate, k: float = 3.0) -> bool:
    """Two estimates agree when their means differ by at most k combined se."""
    return agreement_gap(a, b) <= k


@dataclass
class TestReport:
    """Outcome of one statistical verification.

    ``passed`` is None for informational results (no pass/fail semantics,
    e.g. insufficient sample). ``mandatory`` marks whether a failure should
    fail the whole run; known-defect diagnostics set it to False.
    """

    name: str
    params: dict
    statistic: float
    threshold: float
    passed: bool | None
    diagnostics: dict = field(default_factory=dict)
    seed: object = None
    mandatory: bool = True

    def to_dict(self) -> dict:
        return {
            "test": self.name,
            "params": self.params,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "pass": self.passed,
            "mandatory": self.mandatory,
            "diagnostics": self.diagnostics,
            "seed": self.seed,
        }

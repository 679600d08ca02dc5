"""Replica statistics shared by the estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["DensityEstimate", "jackknife_mean", "jackknife"]


@dataclass(frozen=True)
class DensityEstimate:
    """Monte Carlo point estimate with its jackknife standard error."""

    point: float
    stderr: float
    replicas: int
    method: str
    seed: int
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stderr < 0 or math.isnan(self.stderr):
            raise ValueError("standard error must be a nonnegative number")
        if self.replicas < 1:
            raise ValueError("at least one replica is required")

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return self.point - z * self.stderr, self.point + z * self.stderr

    def as_dict(self) -> dict:
        return {
            "point": self.point,
            "stderr": self.stderr,
            "replicas": self.replicas,
            "method": self.method,
            "seed": self.seed,
            **{f"extra_{k}": v for k, v in self.extras.items()},
        }


def jackknife(values, statistic=np.mean) -> tuple[float, float]:
    """Leave-one-out jackknife estimate and standard error of ``statistic``."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    est = float(statistic(x))
    if n < 2:
        return est, 0.0
    loo = np.array([statistic(np.delete(x, i)) for i in range(n)], dtype=float)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return est, se


def jackknife_mean(values) -> tuple[float, float]:
    """Jackknife of the sample mean; closed form equal to ``std(ddof=1) / sqrt(n)``."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n))

"""Signed critical geometric branching with migration.

A generation of size ``x`` produces ``sgn(x)`` times the sum of ``|x|``
independent Geo(1/2) child counts, then the migration of the step is added.
Geo(p) is supported on {0, 1, ...} with ``P[k] = p (1-p)^k``.

Geometric variables are drawn by inversion from a splitmix64 uniform stream
keyed by ``(seed, run)``, so trajectories are bit-identical across platforms
and ``signed_gw_simulate(..., seed)`` equals run 0 of ``signed_gw_batch``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .instructions import mix64, site_key

__all__ = [
    "MigrationSchedule",
    "Trajectory",
    "ExactLaw",
    "signed_gw_simulate",
    "signed_gw_batch",
    "gw_exact_law",
    "tail_envelope",
    "calibrate_envelope",
    "janson_bound",
    "geometric_sum_sample",
]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_TWO53 = 2.0**-53


@dataclass(frozen=True)
class MigrationSchedule:
    """Per-step migration ``e_1, e_2, ...``; ``e[0]`` is added after the first step."""

    e: tuple
    e_max: int

    def __init__(self, e: Sequence[int], e_max: int | None = None):
        e = tuple(int(x) for x in e)
        bound = max((abs(x) for x in e), default=0)
        if e_max is None:
            e_max = bound
        if e_max < 0:
            raise ValueError("e_max must be nonnegative")
        if bound > e_max:
            raise ValueError(f"|e_j| = {bound} exceeds e_max = {e_max}")
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "e_max", int(e_max))

    @classmethod
    def constant(cls, m: int, steps: int) -> "MigrationSchedule":
        return cls([m] * steps)

    def __len__(self) -> int:
        return len(self.e)

    def array(self, steps: int) -> np.ndarray:
        if steps > len(self.e):
            raise ValueError(f"schedule has {len(self.e)} steps, {steps} requested")
        return np.asarray(self.e[:steps], dtype=np.int64)

    def mean_path(self, x0: int, steps: int) -> np.ndarray:
        """``mu_j = x0 + e_1 + ... + e_j`` for ``j = 0..steps``."""
        return np.concatenate([[x0], x0 + np.cumsum(self.array(steps))]).astype(np.int64)


@dataclass(frozen=True)
class Trajectory:
    X: np.ndarray
    x0: int

    def __post_init__(self):
        if len(self.X) == 0 or int(self.X[0]) != self.x0:
            raise ValueError("trajectory must start at x0")


@njit(cache=True)
def _uniform(key, counter):
    # (0, 1]
    z = mix64(key + (counter + np.uint64(1)) * _GAMMA)
    return (float(z >> np.uint64(11)) + 1.0) * _TWO53


@njit(cache=True)
def _run(x0, e, key, out):
    log_half = math.log(0.5)
    counter = np.uint64(0)
    x = x0
    out[0] = x
    for j in range(e.shape[0]):
        m = abs(x)
        total = 0
        for _ in range(m):
            u = _uniform(key, counter)
            counter += np.uint64(1)
            total += int(math.floor(math.log(u) / log_half))
        if x < 0:
            total = -total
        x = total + e[j]
        out[j + 1] = x


@njit(cache=True)
def _batch(x0, e, seed, runs, out):
    for r in range(runs):
        _run(x0, e, site_key(seed, np.int64(r)), out[r])


def signed_gw_batch(x0: int, schedule: MigrationSchedule, steps: int, runs: int, seed: int) -> np.ndarray:
    """Array of shape ``(runs, steps + 1)``; row ``r`` uses the uniform stream of ``(seed, r)``."""
    if steps < 0 or runs < 0:
        raise ValueError("steps and runs must be nonnegative")
    e = schedule.array(steps)
    out = np.empty((runs, steps + 1), dtype=np.int64)
    _batch(np.int64(x0), e, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), runs, out)
    return out


def signed_gw_simulate(x0: int, schedule: MigrationSchedule, steps: int, seed: int) -> Trajectory:
    """One trajectory ``X_0 = x0, X_1, ..., X_steps``."""
    return Trajectory(signed_gw_batch(x0, schedule, steps, 1, seed)[0], int(x0))


@dataclass(frozen=True)
class ExactLaw:
    """Law of ``X_j``: zero with probability ``1 - survival``, else ``1 + Geo(p)``."""

    survival: float
    p: float

    def pmf(self, x) -> np.ndarray:
        x = np.asarray(x)
        pos = self.survival * self.p * (1.0 - self.p) ** np.maximum(x - 1, 0)
        return np.where(x >= 1, pos, np.where(x == 0, 1.0 - self.survival, 0.0))

    def sf(self, x) -> np.ndarray:
        """``P[X > x]``."""
        x = np.asarray(x)
        return np.where(x >= 1, self.survival * (1.0 - self.p) ** np.maximum(x, 0), np.where(x >= 0, self.survival, 1.0))

    @property
    def mean(self) -> float:
        return self.survival / self.p


def gw_exact_law(j: int, variant: str = "no-migration-survival") -> ExactLaw:
    """Exact law at step ``j`` from ``X_0 = 1``.

    ``no-migration-survival``: survival ``1/(j+1)``, conditionally ``1 + Geo(1/(j+1))``.
    ``unit-immigration``: ``1 + Geo(1/(j+1))``.
    """
    if j < 0:
        raise ValueError("j must be nonnegative")
    p = 1.0 / (j + 1)
    if variant == "no-migration-survival":
        return ExactLaw(p, p)
    if variant == "unit-immigration":
        return ExactLaw(1.0, p)
    raise ValueError(f"unknown variant {variant!r}")


def tail_envelope(j, e_max, x0, t, c: float = 1.0, C: float = 1.0):
    """``C exp(-c t^2 / (j (j e_max + |x0| + t)))``; the constants are supplied by the caller."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    if e_max < 1:
        raise ValueError("e_max must be at least 1")
    denom = j * (j * e_max + abs(x0) + t)
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.where(t == 0, 0.0, -c * t**2 / denom)
    out = C * np.exp(expo)
    return float(out) if out.ndim == 0 else out


def _two_sided_tail(dev: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """``max(P[dev >= t], P[dev <= -t])`` for each ``t``."""
    d = np.sort(dev)
    n = len(d)
    upper = (n - np.searchsorted(d, ts, side="left")) / n
    lower = np.searchsorted(d, -ts, side="right") / n
    return np.maximum(upper, lower)


def calibrate_envelope(deviations, j: int, e_max: int, x0: int, ts, C: float = 2.0, safety: float = 0.5) -> tuple[float, float]:
    """Fit ``c`` so the envelope with prefactor ``C`` dominates the empirical tails at every ``t``.

    The largest feasible ``c`` is shrunk by ``safety``; validate on fresh samples.
    """
    ts = np.asarray(ts, dtype=float)
    tail = _two_sided_tail(np.asarray(deviations, dtype=float), ts)
    best = math.inf
    for t, q in zip(ts, tail):
        if t == 0 or q <= 0:
            continue
        # C exp(-c g) >= q  <=>  c <= log(C / q) / g
        g = t**2 / (j * (j * e_max + abs(x0) + t))
        best = min(best, math.log(C / q) / g)
    if not math.isfinite(best):
        best = 1.0
    return safety * best, C


def janson_bound(p_star: float, nu: float, t) -> np.ndarray | float:
    """``exp(-p_star t^2 / (2 (nu + t)))``, valid on either side when the mean lies on the correct side of ``nu``."""
    t = np.asarray(t, dtype=float)
    out = np.exp(-p_star * t**2 / (2.0 * (nu + t)))
    return float(out) if out.ndim == 0 else out


def geometric_sum_sample(ps: Sequence[float], size: int, seed: int) -> np.ndarray:
    """Samples of ``sum_i (1 + Geo(p_i))``."""
    rng = np.random.default_rng(seed)
    ps = np.asarray(ps, dtype=float)
    # numpy's geometric is supported on {1, 2, ...}
    return rng.geometric(ps[None, :], size=(size, len(ps))).sum(axis=1)

"""Configurations, extended odometers, heights, flows and the minimal odometer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .instructions import SLEEP, StackSource

__all__ = [
    "Configuration",
    "ExtendedOdometer",
    "FlowProfile",
    "lr_counts",
    "final_is_sleep",
    "height",
    "stability_check",
    "flows",
    "minimal_odometer",
]


@dataclass(frozen=True, eq=False)
class Configuration:
    """Particle configuration on ``[start, start + len(counts) - 1]``; empty elsewhere.

    A site holds either ``counts[i]`` active particles or, when ``sleeping[i]``
    is set, exactly one sleeping particle.
    """

    start: int
    counts: np.ndarray
    sleeping: np.ndarray = field(default=None)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).copy()
        if np.any(counts < 0):
            raise ValueError("particle counts must be nonnegative")
        sleeping = (
            np.zeros(len(counts), dtype=bool)
            if self.sleeping is None
            else np.asarray(self.sleeping, dtype=bool).copy()
        )
        if sleeping.shape != counts.shape:
            raise ValueError("sleeping mask must match counts")
        if np.any(sleeping & (counts != 1)):
            raise ValueError("a sleeping site holds exactly one particle")
        counts.setflags(write=False)
        sleeping.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "sleeping", sleeping)

    @classmethod
    def active(cls, counts, start: int = 0) -> "Configuration":
        return cls(start, np.asarray(counts, dtype=np.int64))

    @classmethod
    def constant(cls, n: int, k: int = 1, start: int = 0) -> "Configuration":
        """``k`` active particles on every site of ``[start, start + n]``."""
        return cls(start, np.full(n + 1, k, dtype=np.int64))

    @property
    def stop(self) -> int:
        return self.start + len(self.counts) - 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.start == other.start
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.sleeping, other.sleeping)
        )

    def __hash__(self) -> int:
        return hash((self.start, self.counts.tobytes(), self.sleeping.tobytes()))

    def particles(self, v: int) -> int:
        i = v - self.start
        if 0 <= i < len(self.counts):
            return int(self.counts[i])
        return 0

    def is_sleeping(self, v: int) -> bool:
        i = v - self.start
        return bool(0 <= i < len(self.counts) and self.sleeping[i])

    def total(self) -> int:
        return int(self.counts.sum())

    def sleepers(self) -> int:
        return int(self.sleeping.sum())

    def has_sleepers(self) -> bool:
        return bool(self.sleeping.any())

    def is_stable(self) -> bool:
        """Every site empty or holding one sleeping particle."""
        return bool(np.all((self.counts == 0) | self.sleeping))

    def dumps(self) -> str:
        lines = []
        for i, c in enumerate(self.counts):
            lines.append(f"{self.start + i}\t{'s' if self.sleeping[i] else int(c)}\n")
        return "".join(lines)

    @classmethod
    def loads(cls, text: str) -> "Configuration":
        sites, counts, sleeping = [], [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            v, val = line.split("\t")
            sites.append(int(v))
            sleeping.append(val == "s")
            counts.append(1 if val == "s" else int(val))
        if sites != list(range(sites[0], sites[0] + len(sites))):
            raise ValueError("configuration sites must be consecutive")
        return cls(sites[0], np.array(counts), np.array(sleeping))


@dataclass(frozen=True)
class ExtendedOdometer:
    """Integer-valued odometer on ``[start, start + len(values) - 1]``, zero elsewhere.

    Values may be negative; their execution counts are read from the negative
    half of the instruction stacks.
    """

    start: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int64).copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_tuple(cls, values, start: int = 0) -> "ExtendedOdometer":
        return cls(start, np.asarray(values, dtype=np.int64))

    @property
    def stop(self) -> int:
        return self.start + len(self.values) - 1

    def __call__(self, v: int) -> int:
        i = v - self.start
        if 0 <= i < len(self.values):
            return int(self.values[i])
        return 0

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExtendedOdometer):
            return NotImplemented
        return self.start == other.start and self.as_tuple() == other.as_tuple()

    def __hash__(self) -> int:
        return hash((self.start, self.as_tuple()))

    def __le__(self, other: "ExtendedOdometer") -> bool:
        lo = min(self.start, other.start)
        hi = max(self.stop, other.stop)
        return all(self(v) <= other(v) for v in range(lo, hi + 1))

    def dumps(self) -> str:
        return "".join(f"{self.start + i}\t{int(x)}\n" for i, x in enumerate(self.values))

    @classmethod
    def loads(cls, text: str) -> "ExtendedOdometer":
        pairs = [line.split("\t") for line in text.splitlines() if line.strip()]
        sites = [int(p[0]) for p in pairs]
        if sites != list(range(sites[0], sites[0] + len(sites))):
            raise ValueError("odometer sites must be consecutive")
        return cls(sites[0], np.array([int(p[1]) for p in pairs]))


@dataclass(frozen=True)
class FlowProfile:
    """Net flows ``f[v] = rt(v) - lt(v+1)`` and cumulative sleep counts ``s[v]`` over ``1..v``."""

    f: dict
    s: dict


def lr_counts(u: ExtendedOdometer, src: StackSource, v: int) -> tuple[int, int]:
    x = u(v)
    if x == 0:
        return 0, 0
    return src.signed_lr_counts(v, x)


def final_is_sleep(u: ExtendedOdometer, src: StackSource, v: int) -> bool:
    """Whether the last executed instruction at ``v`` is a sleep (never when ``u(v) = 0``)."""
    x = u(v)
    return x != 0 and int(src.instruction_at(v, x)) == SLEEP


def height(u: ExtendedOdometer, sigma: Configuration, src: StackSource, v: int) -> int:
    """Particles left at ``v``: ``sigma(v) + rt(v-1) + lt(v+1) - lt(v) - rt(v)``."""
    lt_v, rt_v = lr_counts(u, src, v)
    _, rt_prev = lr_counts(u, src, v - 1)
    lt_next, _ = lr_counts(u, src, v + 1)
    return sigma.particles(v) + rt_prev + lt_next - lt_v - rt_v


def stability_check(u, sigma, src, V, mode: str = "stable") -> bool:
    """Stable: ``h(v) in {0,1}`` and ``h(v) = 1`` iff the final instruction is sleep.

    Weak: ``h(v) in {0,1}`` and ``h(v) = 1`` only if the final instruction is sleep.
    """
    if mode not in ("stable", "weak"):
        raise ValueError(f"unknown mode {mode!r}")
    for v in V:
        if sigma.is_sleeping(v):
            raise ValueError("initial configuration has a sleeping particle on the checked set")
        h = height(u, sigma, src, v)
        if h not in (0, 1):
            return False
        asleep = final_is_sleep(u, src, v)
        if mode == "stable" and (h == 1) != asleep:
            return False
        if mode == "weak" and h == 1 and not asleep:
            return False
    return True


def flows(u: ExtendedOdometer, src: StackSource) -> FlowProfile:
    f, s = {}, {}
    running = 0
    for v in range(u.start, u.stop + 1):
        _, rt_v = lr_counts(u, src, v)
        lt_next, _ = lr_counts(u, src, v + 1)
        f[v] = rt_v - lt_next
        if v >= 1 and final_is_sleep(u, src, v):
            running += 1
        s[v] = running if v >= 1 else 0
    return FlowProfile(f, s)


def minimal_odometer(src: StackSource, sigma: Configuration, u0: int, f0: int, n: int) -> ExtendedOdometer:
    """Least odometer on ``[0, n]`` with ``u(0) = u0`` and net flow ``f0`` from 0 to 1.

    Site ``v >= 1`` takes the first index whose signed left count equals
    ``rt(v-1) - f0 - sum_{1 <= i < v} |sigma(i)|``.
    """
    if sigma.has_sleepers():
        raise ValueError("initial configuration must have no sleeping particles")
    vals = np.empty(n + 1, dtype=np.int64)
    vals[0] = u0
    rt_prev = src.signed_lr_counts(0, u0)[1] if u0 != 0 else 0
    mass = 0
    for v in range(1, n + 1):
        target = rt_prev - f0 - mass
        vals[v] = src.nth_left_index(v, target)
        rt_prev = src.signed_lr_counts(v, int(vals[v]))[1] if vals[v] != 0 else 0
        mass += sigma.particles(v)
    return ExtendedOdometer(0, vals)

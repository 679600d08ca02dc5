"""Sitewise stabilization of activated random walk and the four interval/ring models.

Particles are moved only by executing the next unused instruction of the
stack at their site, so the final odometer is independent of the toppling
order.  The kernels below read instructions straight from the keyed hash of
``SeededStacks`` (or from a fixture table) and never store the stacks.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from numba import njit

from .instructions import (
    LEFT,
    RIGHT,
    SLEEP,
    FixtureStacks,
    SeededStacks,
    StackSource,
    draw_instruction,
    site_key,
)
from .odometer_core import Configuration, ExtendedOdometer

__all__ = [
    "Interval",
    "Cycle",
    "BudgetExceeded",
    "StabilizationResult",
    "PointSourceResult",
    "stabilize",
    "driven_dissipative_sample",
    "driven_dissipative_chain",
    "point_source",
    "cycle_fixed_energy",
    "replica_seed",
    "append_replica_rows",
    "CSV_HEADER",
]

DEFAULT_BUDGET = 10**9
CSV_HEADER = (
    "model",
    "lambda",
    "n_or_N",
    "seed",
    "replica",
    "sleepers",
    "tau",
    "emitted_left",
    "emitted_right",
    "span_lo",
    "span_hi",
)

_DONE, _BUDGET, _GROW, _FIXTURE = 0, 1, 2, 3
_SINKS, _RING, _OPEN = 0, 1, 2
_POLICIES = {"fifo": 0, "sweep": 1, "random": 2}

# stats slots
_TAU, _EMIT_L, _EMIT_R, _VIS_LO, _VIS_HI = range(5)


@dataclass(frozen=True)
class Interval:
    """Sites ``a..b`` with absorbing sinks at ``a - 1`` and ``b + 1``."""

    a: int
    b: int


@dataclass(frozen=True)
class Cycle:
    """The ring ``Z / nZ`` on sites ``0..n-1``."""

    n: int


class BudgetExceeded(RuntimeError):
    """Stabilization stopped after executing ``tau`` instructions."""

    def __init__(self, tau: int, message: str = ""):
        super().__init__(message or f"instruction budget exhausted after {tau} instructions")
        self.tau = int(tau)


@dataclass(frozen=True)
class StabilizationResult:
    odometer: ExtendedOdometer
    final_config: Configuration
    emitted_left: int
    emitted_right: int
    tau: int
    sleepers: int


@dataclass(frozen=True)
class PointSourceResult:
    visited: tuple[int, int]
    sleepers_span: tuple[int, int]
    L: int
    result: StabilizationResult


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


@njit(cache=True)
def _fetch(i, idx, origin, seed, left_cut, table, use_table):
    if use_table:
        if idx == 0:
            return LEFT
        if idx > table.shape[1] or table[i, idx - 1] < 0:
            return -1
        return table[i, idx - 1]
    return draw_instruction(site_key(seed, origin + i), left_cut, idx)


@njit(cache=True)
def _xorshift(state):
    x = state[0]
    x ^= x << np.uint64(13)
    x ^= x >> np.uint64(7)
    x ^= x << np.uint64(17)
    state[0] = x
    return x


@njit(cache=True)
def _step(i, counts, asleep, odo, origin, seed, left_cut, table, use_table, boundary, stats):
    """Execute one instruction at local site ``i``; return the receiving site or -1."""
    L = counts.shape[0]
    idx = odo[i] + 1
    if use_table:
        ins = _fetch(i, idx, origin, seed, left_cut, table, use_table)
    else:
        ins = draw_instruction(site_key(seed, origin + i), left_cut, idx)
    if ins < 0:
        return -2
    odo[i] = idx
    stats[_TAU] += 1
    if ins == SLEEP:
        if counts[i] == 1:
            asleep[i] = True
        return -1
    counts[i] -= 1
    w = i - 1 if ins == LEFT else i + 1
    if w < 0 or w >= L:
        if boundary == _RING:
            w = w % L
        else:
            if ins == LEFT:
                stats[_EMIT_L] += 1
            else:
                stats[_EMIT_R] += 1
            return -1
    counts[w] += 1
    asleep[w] = False
    if origin + w < stats[_VIS_LO]:
        stats[_VIS_LO] = origin + w
    if origin + w > stats[_VIS_HI]:
        stats[_VIS_HI] = origin + w
    return w


@njit(cache=True)
def _run(counts, asleep, odo, origin, seed, left_cut, table, use_table, boundary, policy, budget, rng, stats):
    L = counts.shape[0]
    keys = np.empty(L, dtype=np.uint64)
    if not use_table:
        for i in range(L):
            keys[i] = site_key(seed, origin + i)
    if policy == 0:
        queue = np.empty(L + 1, dtype=np.int64)
        inq = np.zeros(L, dtype=np.bool_)
        head = 0
        tail = 0
        for i in range(L):
            if counts[i] > 0 and not asleep[i]:
                queue[tail] = i
                tail += 1
                inq[i] = True
        while head != tail:
            i = queue[head]
            head += 1
            if head == L + 1:
                head = 0
            if boundary == _OPEN and (i == 0 or i == L - 1):
                return _GROW
            key = keys[i]
            while counts[i] > 0 and not asleep[i]:
                if stats[_TAU] >= budget:
                    return _BUDGET
                if counts[i] >= 2:
                    # sleeps are no-ops here: run to the (k-1)-th jump in one pass
                    need = counts[i] - 1
                    idx = odo[i]
                    stop = odo[i] + budget - stats[_TAU]
                    nl = 0
                    nr = 0
                    while nl + nr < need and idx < stop:
                        idx += 1
                        if use_table:
                            ins = _fetch(i, idx, origin, seed, left_cut, table, use_table)
                            if ins < 0:
                                return _FIXTURE
                        else:
                            ins = draw_instruction(key, left_cut, idx)
                        nl += ins == LEFT
                        nr += ins == RIGHT
                    stats[_TAU] += idx - odo[i]
                    odo[i] = idx
                    counts[i] -= nl + nr
                    moves_l = nl
                    moves_r = nr
                else:
                    idx = odo[i] + 1
                    if use_table:
                        ins = _fetch(i, idx, origin, seed, left_cut, table, use_table)
                        if ins < 0:
                            return _FIXTURE
                    else:
                        ins = draw_instruction(key, left_cut, idx)
                    odo[i] = idx
                    stats[_TAU] += 1
                    if ins == SLEEP:
                        asleep[i] = True
                        continue
                    counts[i] -= 1
                    moves_l = 1 if ins == LEFT else 0
                    moves_r = 1 - moves_l
                for side in range(2):
                    k = moves_l if side == 0 else moves_r
                    if k == 0:
                        continue
                    w = i - 1 if side == 0 else i + 1
                    if w < 0 or w >= L:
                        if boundary == _RING:
                            w = w % L
                        else:
                            stats[_EMIT_L + side] += k
                            continue
                    counts[w] += k
                    asleep[w] = False
                    if origin + w < stats[_VIS_LO]:
                        stats[_VIS_LO] = origin + w
                    if origin + w > stats[_VIS_HI]:
                        stats[_VIS_HI] = origin + w
                    if not inq[w]:
                        inq[w] = True
                        queue[tail] = w
                        tail += 1
                        if tail == L + 1:
                            tail = 0
            inq[i] = False
        return _DONE
    if policy == 1:
        changed = True
        while changed:
            changed = False
            for i in range(L):
                if counts[i] > 0 and not asleep[i]:
                    if boundary == _OPEN and (i == 0 or i == L - 1):
                        return _GROW
                    if stats[_TAU] >= budget:
                        return _BUDGET
                    w = _step(i, counts, asleep, odo, origin, seed, left_cut, table, use_table, boundary, stats)
                    if w == -2:
                        return _FIXTURE
                    changed = True
        return _DONE
    # uniformly random unstable site, one instruction at a time
    active = np.empty(L, dtype=np.int64)
    while True:
        m = 0
        for i in range(L):
            if counts[i] > 0 and not asleep[i]:
                active[m] = i
                m += 1
        if m == 0:
            return _DONE
        i = active[_xorshift(rng) % np.uint64(m)]
        if boundary == _OPEN and (i == 0 or i == L - 1):
            return _GROW
        if stats[_TAU] >= budget:
            return _BUDGET
        w = _step(i, counts, asleep, odo, origin, seed, left_cut, table, use_table, boundary, stats)
        if w == -2:
            return _FIXTURE


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


class _State:
    """Mutable arrays for a run on sites ``origin..origin + L - 1``."""

    def __init__(self, origin: int, L: int, src: StackSource):
        self.origin = origin
        self.counts = np.zeros(L, dtype=np.int64)
        self.asleep = np.zeros(L, dtype=np.bool_)
        self.odo = np.zeros(L, dtype=np.int64)
        self.stats = np.zeros(5, dtype=np.int64)
        self.stats[_VIS_LO] = np.iinfo(np.int64).max
        self.stats[_VIS_HI] = np.iinfo(np.int64).min
        self.src = src
        self._table()

    def _table(self):
        src = self.src
        if isinstance(src, SeededStacks):
            self.seed = np.uint64(src.master_seed)
            self.left_cut = src.left_cut
            self.table = np.zeros((1, 1), dtype=np.int8)
            self.use_table = False
        elif isinstance(src, FixtureStacks):
            L = len(self.counts)
            width = max([len(t) for t in src.tables.values()] + [1])
            table = np.full((L, width), -1, dtype=np.int8)
            for i in range(L):
                row = src.tables.get(self.origin + i)
                if row is not None:
                    table[i, : len(row)] = row
            self.seed = np.uint64(0)
            self.left_cut = np.uint64(0)
            self.table = table
            self.use_table = True
        else:
            raise TypeError(f"unsupported instruction source {type(src).__name__}")

    def mark_initial_visits(self):
        occupied = np.flatnonzero(self.counts > 0)
        if len(occupied):
            self.stats[_VIS_LO] = min(self.stats[_VIS_LO], self.origin + occupied[0])
            self.stats[_VIS_HI] = max(self.stats[_VIS_HI], self.origin + occupied[-1])

    def grow(self):
        L = len(self.counts)
        pad = L

        def widen(arr):
            out = np.zeros(L + 2 * pad, dtype=arr.dtype)
            out[pad : pad + L] = arr
            return out

        self.counts = widen(self.counts)
        self.asleep = widen(self.asleep)
        self.odo = widen(self.odo)
        self.origin -= pad
        self._table()

    def run(self, boundary: int, policy: str, budget: int, rng_seed: int = 0):
        rng = np.array([np.uint64(rng_seed) * np.uint64(2) + np.uint64(1)], dtype=np.uint64)
        return _run(
            self.counts,
            self.asleep,
            self.odo,
            np.int64(self.origin),
            self.seed,
            self.left_cut,
            self.table,
            self.use_table,
            boundary,
            _POLICIES[policy],
            np.int64(budget),
            rng,
            self.stats,
        )

    def result(self) -> StabilizationResult:
        return StabilizationResult(
            odometer=ExtendedOdometer(self.origin, self.odo.copy()),
            final_config=Configuration(self.origin, self.counts.copy(), self.asleep & (self.counts == 1)),
            emitted_left=int(self.stats[_EMIT_L]),
            emitted_right=int(self.stats[_EMIT_R]),
            tau=int(self.stats[_TAU]),
            sleepers=int(np.count_nonzero(self.asleep)),
        )


def _check_status(status: int, state: _State):
    if status == _BUDGET:
        raise BudgetExceeded(int(state.stats[_TAU]))
    if status == _FIXTURE:
        from .instructions import FixtureOutOfWindow

        raise FixtureOutOfWindow("stabilization ran past the fixture window")


def stabilize(
    sigma: Configuration,
    region,
    src: StackSource,
    policy: str = "fifo",
    budget: int = DEFAULT_BUDGET,
    rng_seed: int = 0,
) -> StabilizationResult:
    """Stabilize ``sigma`` on ``region`` (an ``Interval`` or a ``Cycle``).

    Parameters
    ----------
    policy : {"fifo", "sweep", "random"}
        Toppling order.  ``fifo`` topples each queued site until it is stable;
        ``sweep`` executes one instruction per unstable site per left-to-right
        pass; ``random`` executes one instruction at a uniformly chosen
        unstable site (``rng_seed`` drives the choice).
    budget : int
        Maximum number of executed instructions.

    Raises
    ------
    BudgetExceeded
        When the budget is used up before the region is stable.
    """
    if sigma.has_sleepers():
        raise ValueError("initial configuration must have no sleeping particles")
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if isinstance(region, Cycle):
        origin, L, boundary = 0, region.n, _RING
    elif isinstance(region, Interval):
        origin, L, boundary = region.a, region.b - region.a + 1, _SINKS
    else:
        a, b = region
        origin, L, boundary = a, b - a + 1, _SINKS
    if L < 1:
        raise ValueError("empty region")
    state = _State(origin, L, src)
    for v in range(sigma.start, sigma.stop + 1):
        k = sigma.particles(v)
        if not k:
            continue
        i = v - origin
        if boundary == _RING:
            i %= L
        elif not 0 <= i < L:
            raise ValueError(f"particles at site {v} lie outside the region")
        state.counts[i] += k
    state.mark_initial_visits()
    status = state.run(boundary, policy, budget, rng_seed)
    _check_status(status, state)
    return state.result()


def replica_seed(master_seed: int, *labels: int) -> int:
    """Derive an independent 64-bit seed from a master seed and integer labels."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *[int(x) & 0xFFFFFFFF for x in labels]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def driven_dissipative_sample(n: int, lam: float, seed: int, budget: int = DEFAULT_BUDGET) -> StabilizationResult:
    """Stabilize one active particle per site of ``[0, n]`` with sinks at ``-1`` and ``n + 1``.

    The sleeper count is a draw of the stationary sleeper count of the
    driven-dissipative chain on ``[0, n]``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    src = SeededStacks(seed, lam)
    return stabilize(Configuration.constant(n), Interval(0, n), src, budget=budget)


def driven_dissipative_chain(
    n: int,
    lam: float,
    seed: int,
    steps: int,
    insertion="uniform",
    budget: int = DEFAULT_BUDGET,
    start: Configuration | None = None,
) -> list[Configuration]:
    """Run the add-one-then-stabilize chain on ``[0, n]`` for ``steps`` steps.

    ``insertion`` is ``"uniform"`` or ``("fixed", site)``.  Stacks persist
    across steps, so each step resumes every site at its next unused
    instruction.  A particle added to a sleeping site wakes it (two active).
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    src = SeededStacks(seed, lam)
    rng = np.random.default_rng(replica_seed(seed, 0xD0))
    state = _State(0, n + 1, src)
    if start is not None:
        for v in range(start.start, start.stop + 1):
            if 0 <= v <= n:
                state.counts[v] = start.particles(v)
                state.asleep[v] = start.is_sleeping(v)
    out = []
    for _ in range(steps):
        if insertion == "uniform":
            v = int(rng.integers(0, n + 1))
        elif isinstance(insertion, tuple) and insertion[0] == "fixed":
            v = int(insertion[1])
        else:
            raise ValueError(f"unknown insertion rule {insertion!r}")
        state.counts[v] += 1
        state.asleep[v] = False
        status = state.run(_SINKS, "fifo", budget + int(state.stats[_TAU]))
        _check_status(status, state)
        out.append(Configuration(0, state.counts.copy(), state.asleep & (state.counts == 1)))
    return out


def point_source(N: int, lam: float, seed: int, budget: int | None = None) -> PointSourceResult:
    """Stabilize ``N`` active particles at the origin of Z.

    The default budget is ``max(10^9, 4 N^3)``; the work grows roughly like ``N^3``.

    The site array starts small and doubles outward whenever a particle
    reaches its edge; a span larger than ``64 N`` raises ``BudgetExceeded``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if budget is None:
        budget = max(DEFAULT_BUDGET, 4 * N**3)
    src = SeededStacks(seed, lam)
    half = 64
    state = _State(-half, 2 * half + 1, src)
    state.counts[half] = N
    state.mark_initial_visits()
    cap = 64 * N
    while True:
        status = state.run(_OPEN, "fifo", budget)
        if status != _GROW:
            break
        if len(state.counts) >= max(cap, 2 * half + 1):
            raise BudgetExceeded(int(state.stats[_TAU]), "point-source span cap reached")
        state.grow()
    _check_status(status, state)
    res = state.result()
    sleeping = np.flatnonzero(state.asleep)
    lo_s = int(state.origin + sleeping[0])
    hi_s = int(state.origin + sleeping[-1])
    visited = (int(state.stats[_VIS_LO]), int(state.stats[_VIS_HI]))
    return PointSourceResult(visited, (lo_s, hi_s), hi_s - lo_s + 1, res)


def cycle_fixed_energy(n: int, rho: float, lam: float, seed: int, budget: int) -> int:
    """Total instructions to stabilize ``floor(rho n)`` active particles dropped uniformly on the n-cycle.

    Raises
    ------
    BudgetExceeded
        If stabilization needs more than ``budget`` instructions.
    """
    if n < 2:
        raise ValueError("cycle needs at least two sites")
    k = int(np.floor(rho * n))
    rng = np.random.default_rng(replica_seed(seed, 0xC1))
    counts = np.bincount(rng.integers(0, n, size=k), minlength=n)
    src = SeededStacks(seed, lam)
    res = stabilize(Configuration.active(counts), Cycle(n), src, budget=budget)
    return res.tau


def append_replica_rows(path: str | os.PathLike, rows) -> None:
    """Append replica rows (dicts keyed by ``CSV_HEADER``) to a CSV file."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        if new:
            w.writeheader()
        for row in rows:
            w.writerow(row)

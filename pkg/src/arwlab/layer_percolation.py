"""Layer percolation: step primitives, infection sets, canonical paths and estimators.

Cells ``(r, s)_k`` carry a column ``r``, a row ``s`` and a step ``k``; the
diagonal of a cell is ``j = r + s``. The primitives of step ``k`` (widths
``R_j`` and marker bits ``B^j``) govern infections from step ``k - 1`` to
step ``k``: a cell on diagonal ``j`` infects every column of
``layer(j) = [R_0 + ... + R_{j-1}, R_0 + ... + R_j]`` in its own row, and the
columns of that layer whose marker bit is set in the row above.

Primitive families map a step number to its :class:`StepPrimitives`. A plain
sequence ``prims`` is accepted wherever a family is expected, with
``prims[i]`` holding the primitives of step ``i + 1``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from numba import njit

from .instructions import LEFT, RIGHT
from .stats import DensityEstimate, jackknife_mean

__all__ = [
    "Cell",
    "StepPrimitives",
    "InfectionSet",
    "InfectionPath",
    "SampledFamily",
    "ListFamily",
    "PrimitivesExhausted",
    "WindowError",
    "MemoryBudgetExceeded",
    "ReversePathBlocked",
    "DEFAULT_CELL_BUDGET",
    "sleep_probability",
    "as_family",
    "layer_interval",
    "infects",
    "advance_infection_set",
    "infection_set",
    "backward_infection_set",
    "minimal_path",
    "upper_right_sequence",
    "lower_left_bound",
    "upper_right_bound",
    "greedy_path",
    "greedy_block_endpoints",
    "shift_coupling",
    "reverse_coupling",
    "reduced_stream",
    "max_row_full",
    "estimate_rho_star",
    "replica_seeds",
    "box_event",
    "rho_k_full",
    "bad_event_prob",
    "box_coverage",
]

DEFAULT_CELL_BUDGET = 10**8
_CHUNK = 256


class PrimitivesExhausted(IndexError):
    """A finite primitive record was queried past its last complete diagonal."""


class WindowError(IndexError):
    """A windowed primitive record was queried below its first diagonal."""


class MemoryBudgetExceeded(MemoryError):
    """An infection-set frame would exceed the configured cell budget."""


class ReversePathBlocked(RuntimeError):
    """No same-row infector exists for a reverse minimal step."""


def sleep_probability(lam: float) -> float:
    if not lam > 0:
        raise ValueError("sleep rate must be positive")
    return lam / (1.0 + lam)


@dataclass(frozen=True, order=True)
class Cell:
    r: int
    s: int
    k: int = 0

    def __post_init__(self):
        if self.r < 0 or self.s < 0 or self.k < 0:
            raise ValueError(f"cell coordinates must be nonnegative, got {self}")

    @property
    def diagonal(self) -> int:
        return self.r + self.s


# ----------------------------------------------------------------------------
# Step primitives


class _SampledProducer:
    """Fresh i.i.d. primitives in fixed chunks so draws are reproducible."""

    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = rng

    def __call__(self):
        R = self.rng.geometric(0.5, _CHUNK).astype(np.int64) - 1
        bits = (self.rng.random(int(R.sum()) + _CHUNK) < self.p).astype(np.uint8)
        return R, bits


class _ListProducer:
    def __init__(self, R, bits):
        self._data = (np.asarray(R, dtype=np.int64), np.asarray(bits, dtype=np.uint8))

    def __call__(self):
        out, self._data = self._data, None
        return out


class _ReducedProducer:
    """Groups a reduced-instruction stream ``(letter, bit)`` into diagonals.

    A diagonal is emitted only once the next left is seen, so a finite stream
    yields exactly its complete diagonals.
    """

    def __init__(self, pairs: Iterable):
        self._it = iter(pairs)
        self._head = None
        self._done = False
        first = next(self._it, None)
        if first is None:
            self._done = True
        elif int(first[0]) != LEFT:
            raise ValueError("reduced instructions must start with a left")
        else:
            self._head = first

    def __call__(self):
        if self._done:
            return None
        Rs, bits = [], []
        while len(Rs) < _CHUNK:
            diag = [int(self._head[1])]
            nxt = None
            for item in self._it:
                if int(item[0]) == LEFT:
                    nxt = item
                    break
                diag.append(int(item[1]))
            if nxt is None:
                self._done = True
                break
            Rs.append(len(diag) - 1)
            bits.extend(diag)
            self._head = nxt
        if not Rs:
            return None
        return np.array(Rs, dtype=np.int64), np.array(bits, dtype=np.uint8)


class _ConcatProducer:
    """``count`` diagonals from ``first`` followed by all diagonals of ``rest``."""

    def __init__(self, first: "StepPrimitives", count: int, rest: "StepPrimitives"):
        self._first, self._count, self._rest = first, count, rest
        self._j = 0

    def __call__(self):
        if self._j < self._count:
            n = min(_CHUNK, self._count - self._j)
            out = self._first.export(self._j, n)
        else:
            out = self._rest.export(self._j - self._count, _CHUNK)
        if out is None or len(out[0]) == 0:
            return None
        self._j += len(out[0])
        return out


class StepPrimitives:
    """Widths ``R_j`` and markers ``B^j`` of one step, materialized lazily per diagonal.

    The record starts at diagonal ``base`` with ``lo(base) = base_lo``; queries
    below ``base`` raise :class:`WindowError`. Finite records raise
    :class:`PrimitivesExhausted` past their last diagonal.
    """

    def __init__(self, producer, base: int = 0, base_lo: int = 0, provenance: tuple = ("fixed",)):
        if base < 0 or base_lo < 0:
            raise ValueError("window origin must be nonnegative")
        self._producer = producer
        self.base = int(base)
        self.base_lo = int(base_lo)
        self.provenance = provenance
        self._lo = np.empty(1 + _CHUNK, dtype=np.int64)
        self._lo[0] = base_lo
        self._nlo = 1
        self._bits = np.empty(4 * _CHUNK, dtype=np.uint8)
        self._nbits = 0
        self._exhausted = False
        self._lock = threading.Lock()

    # constructors ---------------------------------------------------------

    @classmethod
    def from_lists(cls, widths: Sequence[int], markers: Sequence[Sequence[int]]) -> "StepPrimitives":
        """Finite record from explicit widths and marker tuples."""
        if len(widths) != len(markers):
            raise ValueError("need one marker tuple per width")
        for w, b in zip(widths, markers):
            if w < 0 or len(b) != w + 1:
                raise ValueError("marker tuple B^j must have R_j + 1 entries")
        bits = [int(x) for b in markers for x in b]
        return cls(_ListProducer(widths, bits), provenance=("fixed",))

    @classmethod
    def sampled(cls, lam: float, seed: int, step: int, base: int = 0, rng=None) -> "StepPrimitives":
        """Fresh i.i.d. primitives; ``base > 0`` opens a window at diagonal ``base``.

        The window origin ``lo(base)`` is a sum of ``base`` independent
        Geo(1/2) widths, drawn as one negative binomial.
        """
        if rng is None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, step, 0x51])))
        base_lo = int(rng.negative_binomial(base, 0.5)) if base > 0 else 0
        return cls(_SampledProducer(sleep_probability(lam), rng), base, base_lo, ("sampled", seed, step))

    @classmethod
    def from_reduced(cls, pairs: Iterable, provenance: tuple = ("converted",)) -> "StepPrimitives":
        """Primitives from reduced instructions given as ``(letter, bit)`` pairs."""
        return cls(_ReducedProducer(pairs), provenance=provenance)

    # materialization -------------------------------------------------------

    @property
    def materialized(self) -> int:
        return self._nlo - 1

    def _append(self, R, bits):
        need = self._nlo + len(R)
        if need > len(self._lo):
            grown = np.empty(max(need, 2 * len(self._lo)), dtype=np.int64)
            grown[: self._nlo] = self._lo[: self._nlo]
            self._lo = grown
        self._lo[self._nlo : need] = self._lo[self._nlo - 1] + np.cumsum(R)
        self._nlo = need
        nb = self._nbits + len(bits)
        if nb > len(self._bits):
            grown = np.empty(max(nb, 2 * len(self._bits)), dtype=np.uint8)
            grown[: self._nbits] = self._bits[: self._nbits]
            self._bits = grown
        self._bits[self._nbits : nb] = bits
        self._nbits = nb

    def _pull(self) -> bool:
        if self._exhausted:
            return False
        out = self._producer()
        if out is None or len(out[0]) == 0:
            self._exhausted = True
            return False
        R, bits = out
        if len(bits) != int(np.sum(R)) + len(R):
            raise ValueError("producer returned inconsistent markers")
        self._append(R, bits)
        return True

    def ensure(self, j: int) -> None:
        """Materialize diagonals through ``j``."""
        if j < self.base:
            raise WindowError(f"diagonal {j} lies below the window origin {self.base}")
        if j < self.base + self.materialized:
            return
        with self._lock:
            while j >= self.base + self.materialized:
                if not self._pull():
                    raise PrimitivesExhausted(f"diagonal {j} is beyond the finite primitive record")

    def ensure_column(self, x: int) -> None:
        """Materialize until every diagonal whose layer starts at or before ``x`` is known."""
        with self._lock:
            while self._lo[self._nlo - 1] <= x:
                if not self._pull():
                    raise PrimitivesExhausted(f"column {x} is beyond the finite primitive record")

    def try_ensure(self, j: int) -> int:
        """Materialize through ``j`` where possible; return the last available diagonal."""
        try:
            self.ensure(j)
        except PrimitivesExhausted:
            pass
        return self.base + self.materialized - 1

    # queries ---------------------------------------------------------------

    def lo(self, j: int) -> int:
        if j == self.base:
            return self.base_lo
        self.ensure(j - 1)
        return int(self._lo[j - self.base])

    def hi(self, j: int) -> int:
        self.ensure(j)
        return int(self._lo[j - self.base + 1])

    def layer(self, j: int) -> tuple[int, int]:
        return self.lo(j), self.hi(j)

    def width(self, j: int) -> int:
        lo, hi = self.layer(j)
        return hi - lo

    def _offset(self, j: int) -> int:
        return int(self._lo[j - self.base]) - self.base_lo + (j - self.base)

    def markers(self, j: int) -> tuple[int, ...]:
        self.ensure(j)
        off = self._offset(j)
        return tuple(int(b) for b in self._bits[off : off + self.width(j) + 1])

    def marker(self, j: int, i: int) -> int:
        self.ensure(j)
        if not 0 <= i <= self.width(j):
            raise IndexError("marker index outside the layer")
        return int(self._bits[self._offset(j) + i])

    def widths(self, count: int, start: int | None = None) -> list[int]:
        start = self.base if start is None else start
        return [self.width(j) for j in range(start, start + count)]

    def diagonals_covering(self, x: int) -> range:
        """All ``j`` with ``lo(j) <= x <= hi(j)``; empty when ``x < lo(base)``."""
        if x < self.base_lo:
            return range(0)
        self.ensure_column(x)
        lo = self._lo[: self._nlo]
        # lo[i] = lo(base + i); need hi(j) = lo[j-base+1] >= x and lo(j) <= x
        first = int(np.searchsorted(lo, x, side="left")) - 1
        last = int(np.searchsorted(lo, x, side="right")) - 1
        first = max(first, 0)
        return range(self.base + first, self.base + last + 1)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Views of the materialized layer starts and concatenated marker bits."""
        return self._lo[: self._nlo], self._bits[: self._nbits]

    def export(self, j0: int, count: int):
        """Widths and markers of diagonals ``j0 .. j0 + count - 1`` (truncated if finite)."""
        last = min(self.try_ensure(j0 + count - 1), j0 + count - 1)
        if last < j0:
            return None
        lo = self._lo[j0 - self.base : last - self.base + 2]
        R = np.diff(lo)
        a = self._offset(j0)
        b = int(lo[-1]) - self.base_lo + (last + 1 - self.base)
        return R.copy(), self._bits[a:b].copy()

    def __repr__(self) -> str:
        return f"StepPrimitives(base={self.base}, materialized={self.materialized}, provenance={self.provenance})"


# ----------------------------------------------------------------------------
# Families


class SampledFamily:
    """Independent sampled primitives for every step.

    With ``windowed=True`` the record of a step opens at the ``min_diagonal``
    of its first query, so only diagonals near the active region are drawn.
    """

    def __init__(self, lam: float, seed: int, windowed: bool = False):
        self.lam = float(lam)
        self.seed = int(seed)
        self.windowed = windowed
        self._cache: dict[int, StepPrimitives] = {}
        self._lock = threading.Lock()

    def get(self, step: int, min_diagonal: int = 0) -> StepPrimitives:
        if step < 1:
            raise ValueError("primitives are indexed by steps k >= 1")
        with self._lock:
            p = self._cache.get(step)
            if p is None:
                base = max(int(min_diagonal), 0) if self.windowed else 0
                p = StepPrimitives.sampled(self.lam, self.seed, step, base=base)
                self._cache[step] = p
        return p

    def release(self, below: int) -> None:
        """Drop cached records of steps before ``below``."""
        with self._lock:
            for k in [k for k in self._cache if k < below]:
                del self._cache[k]


class ListFamily:
    """Explicit records; ``records[i]`` defines step ``first_step + i``."""

    def __init__(self, records: Sequence[StepPrimitives], first_step: int = 1, lam: float | None = None):
        self.records = list(records)
        self.first_step = first_step
        self.lam = lam

    def get(self, step: int, min_diagonal: int = 0) -> StepPrimitives:
        i = step - self.first_step
        if not 0 <= i < len(self.records):
            raise PrimitivesExhausted(f"no primitives for step {step}")
        return self.records[i]

    def __len__(self) -> int:
        return len(self.records)


def as_family(prims):
    if hasattr(prims, "get") and not isinstance(prims, dict):
        return prims
    if isinstance(prims, StepPrimitives):
        return ListFamily([prims])
    return ListFamily(list(prims))


# ----------------------------------------------------------------------------
# Basic infection rule


def layer_interval(prim: StepPrimitives, j: int) -> tuple[int, int]:
    """Inclusive column interval ``[R_0 + ... + R_{j-1}, R_0 + ... + R_j]``."""
    return prim.layer(j)


def infects(prim: StepPrimitives, frm: Cell, to: Cell) -> bool:
    if frm.k + 1 != to.k:
        raise ValueError("infection runs from step k - 1 to step k")
    j = frm.r + frm.s
    lo, hi = prim.layer(j)
    if not lo <= to.r <= hi:
        return False
    if to.s == frm.s:
        return True
    return to.s == frm.s + 1 and prim.marker(j, to.r - lo) == 1


# ----------------------------------------------------------------------------
# Dense kernels


@njit(cache=True)
def _diag_range(M, row0, col0):
    jmin = -1
    jmax = -1
    for a in range(M.shape[0]):
        first = -1
        last = -1
        for c in range(M.shape[1]):
            if M[a, c]:
                if first < 0:
                    first = c
                last = c
        if first >= 0:
            d0 = col0 + first + row0 + a
            d1 = col0 + last + row0 + a
            if jmin < 0 or d0 < jmin:
                jmin = d0
            if d1 > jmax:
                jmax = d1
    return jmin, jmax


@njit(cache=True)
def _advance_dense(M, row0, col0, lo_arr, bits, base, base_lo, ncol0, width):
    nr = M.shape[0]
    out = np.zeros((nr + 1, width), dtype=np.uint8)
    for a in range(nr):
        s = row0 + a
        filled = ncol0 - 1
        for c in range(M.shape[1]):
            if M[a, c] == 0:
                continue
            j = col0 + c + s
            lo = lo_arr[j - base]
            hi = lo_arr[j - base + 1]
            x = lo if lo > filled + 1 else filled + 1
            while x <= hi:
                out[a, x - ncol0] = 1
                x += 1
            if hi > filled:
                filled = hi
            off = lo - base_lo + (j - base)
            for t in range(hi - lo + 1):
                if bits[off + t]:
                    out[a + 1, lo + t - ncol0] = 1
    return out


@njit(cache=True)
def _backward_dense(T, row0, col0, lo_arr, bits, base, base_lo, j_lo, j_hi, cmin, ncols):
    nr, W = T.shape
    P = np.zeros((nr, W + 1), dtype=np.int64)
    for a in range(nr):
        for c in range(W):
            P[a, c + 1] = P[a, c] + T[a, c]
    out = np.zeros((nr + 1, ncols), dtype=np.uint8)
    for a2 in range(nr + 1):
        s = row0 - 1 + a2
        if s < 0:
            continue
        for j in range(j_lo, j_hi + 1):
            c = j - s
            if c < 0:
                continue
            lo = lo_arr[j - base]
            hi = lo_arr[j - base + 1]
            hit = False
            a = a2 - 1
            if a >= 0:
                x0 = lo if lo > col0 else col0
                x1 = hi if hi < col0 + W - 1 else col0 + W - 1
                if x0 <= x1 and P[a, x1 - col0 + 1] - P[a, x0 - col0] > 0:
                    hit = True
            if not hit and a2 < nr:
                off = lo - base_lo + (j - base)
                for t in range(hi - lo + 1):
                    x = lo + t
                    if bits[off + t] and col0 <= x < col0 + W and T[a2, x - col0]:
                        hit = True
                        break
            if hit:
                out[a2, c - cmin] = 1
    return out


class _Grid:
    """Dense bitmap frame: ``M[a, c]`` is cell ``(col0 + c, row0 + a)`` at ``step``."""

    __slots__ = ("M", "row0", "col0", "step")

    def __init__(self, M, row0, col0, step):
        self.M, self.row0, self.col0, self.step = M, row0, col0, step

    @classmethod
    def single(cls, cell: Cell) -> "_Grid":
        return cls(np.ones((1, 1), dtype=np.uint8), cell.s, cell.r, cell.k)

    def trimmed(self) -> "_Grid":
        rows = np.flatnonzero(self.M.any(axis=1))
        if len(rows) == 0:
            return _Grid(np.zeros((0, 0), dtype=np.uint8), self.row0, self.col0, self.step)
        cols = np.flatnonzero(self.M.any(axis=0))
        M = self.M[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
        return _Grid(np.ascontiguousarray(M), self.row0 + int(rows[0]), self.col0 + int(cols[0]), self.step)

    def empty(self) -> bool:
        return self.M.size == 0 or not self.M.any()

    def contains(self, r: int, s: int) -> bool:
        a, c = s - self.row0, r - self.col0
        return 0 <= a < self.M.shape[0] and 0 <= c < self.M.shape[1] and bool(self.M[a, c])

    def max_row(self) -> int:
        return self.row0 + int(np.flatnonzero(self.M.any(axis=1))[-1])

    def min_row(self) -> int:
        return self.row0 + int(np.flatnonzero(self.M.any(axis=1))[0])

    def row_columns(self, s: int) -> np.ndarray:
        a = s - self.row0
        if not 0 <= a < self.M.shape[0]:
            return np.empty(0, dtype=np.int64)
        return self.col0 + np.flatnonzero(self.M[a])


def _check_budget(cells: int, budget: int | None):
    if budget is not None and cells > budget:
        raise MemoryBudgetExceeded(f"frame of {cells} cells exceeds the budget of {budget}")


def _advance_grid(g: _Grid, prim: StepPrimitives, budget: int | None = DEFAULT_CELL_BUDGET) -> _Grid:
    jmin, jmax = _diag_range(g.M, g.row0, g.col0)
    if jmin < 0:
        raise ValueError("cannot advance an empty infection set")
    prim.ensure(jmax)
    prim.ensure(jmin)
    ncol0 = prim.lo(jmin)
    width = prim.hi(jmax) - ncol0 + 1
    _check_budget((g.M.shape[0] + 1) * width, budget)
    lo_arr, bits = prim.arrays()
    out = _advance_dense(g.M, g.row0, g.col0, lo_arr, bits, prim.base, prim.base_lo, ncol0, width)
    return _Grid(out, g.row0, ncol0, g.step + 1).trimmed()


def _backward_grid(g: _Grid, prim: StepPrimitives, budget: int | None = DEFAULT_CELL_BUDGET) -> _Grid:
    nr, W = g.M.shape
    xmin, xmax = g.col0, g.col0 + W - 1
    if prim.base > 0:
        raise WindowError("backward sets need the primitive record from diagonal 0")
    prim.ensure_column(xmax)
    lo_arr, bits = prim.arrays()
    # j_lo: first j with hi(j) >= xmin; j_hi: last j with lo(j) <= xmax
    i_lo = max(int(np.searchsorted(lo_arr, xmin, side="left")) - 1, 0)
    i_hi = int(np.searchsorted(lo_arr, xmax, side="right")) - 1
    j_lo, j_hi = i_lo, i_hi
    top = g.row0 + nr - 1
    cmin = max(j_lo - top, 0)
    cmax = j_hi - max(g.row0 - 1, 0)
    if cmax < cmin:
        return _Grid(np.zeros((0, 0), dtype=np.uint8), g.row0, 0, g.step - 1)
    ncols = cmax - cmin + 1
    _check_budget((nr + 1) * ncols, budget)
    out = _backward_dense(g.M, g.row0, g.col0, lo_arr, bits, prim.base, prim.base_lo, j_lo, j_hi, cmin, ncols)
    return _Grid(out, g.row0 - 1, cmin, g.step - 1).trimmed()


# ----------------------------------------------------------------------------
# Infection sets


class InfectionSet:
    """Cells of one step stored as per-row sorted runs ``[start, stop]`` (inclusive)."""

    def __init__(self, step: int, rows: dict, backward: bool = False):
        self.step = step
        self.backward = backward
        self.rows = {
            int(s): np.asarray(runs, dtype=np.int64).reshape(-1, 2) for s, runs in rows.items() if len(runs)
        }

    @classmethod
    def from_cells(cls, cells: Iterable, step: int | None = None, backward: bool = False) -> "InfectionSet":
        by_row: dict[int, list[int]] = {}
        steps = set()
        for c in cells:
            r, s = (c.r, c.s) if isinstance(c, Cell) else (c[0], c[1])
            if isinstance(c, Cell):
                steps.add(c.k)
            by_row.setdefault(s, []).append(r)
        if step is None:
            if len(steps) > 1:
                raise ValueError("cells from several steps")
            step = steps.pop() if steps else 0
        rows = {s: _runs(np.unique(np.asarray(cols, dtype=np.int64))) for s, cols in by_row.items()}
        return cls(step, rows, backward)

    @classmethod
    def _from_grid(cls, g: _Grid, backward: bool = False) -> "InfectionSet":
        rows = {}
        for a in range(g.M.shape[0]):
            cols = np.flatnonzero(g.M[a])
            if len(cols):
                rows[g.row0 + a] = _runs(cols + g.col0)
        return cls(g.step, rows, backward)

    def _to_grid(self) -> _Grid:
        if not self.rows:
            raise ValueError("empty infection set")
        r0, r1 = min(self.rows), max(self.rows)
        c0 = min(int(runs[0, 0]) for runs in self.rows.values())
        c1 = max(int(runs[-1, 1]) for runs in self.rows.values())
        M = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=np.uint8)
        for s, runs in self.rows.items():
            for a, b in runs:
                M[s - r0, a - c0 : b - c0 + 1] = 1
        return _Grid(M, r0, c0, self.step)

    def __contains__(self, cell) -> bool:
        r, s = (cell.r, cell.s) if isinstance(cell, Cell) else cell
        if isinstance(cell, Cell) and cell.k != self.step:
            return False
        runs = self.rows.get(s)
        if runs is None:
            return False
        i = int(np.searchsorted(runs[:, 0], r, side="right")) - 1
        return i >= 0 and runs[i, 1] >= r

    def __len__(self) -> int:
        return int(sum(int((runs[:, 1] - runs[:, 0] + 1).sum()) for runs in self.rows.values()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, InfectionSet):
            return NotImplemented
        return self.step == other.step and self.cell_set() == other.cell_set()

    def cells(self) -> Iterator[Cell]:
        for s in sorted(self.rows):
            for a, b in self.rows[s]:
                for r in range(int(a), int(b) + 1):
                    yield Cell(r, s, self.step)

    def cell_set(self) -> set[tuple[int, int]]:
        return {(c.r, c.s) for c in self.cells()}

    def is_empty(self) -> bool:
        return not self.rows

    @property
    def max_row(self) -> int:
        return max(self.rows)

    @property
    def min_row(self) -> int:
        return min(self.rows)

    base_row = min_row

    def columns(self, s: int) -> np.ndarray:
        runs = self.rows.get(s)
        if runs is None:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([np.arange(a, b + 1) for a, b in runs])

    def shifted(self, dr: int, ds: int, step: int | None = None) -> "InfectionSet":
        return InfectionSet(
            self.step if step is None else step,
            {s + ds: runs + dr for s, runs in self.rows.items()},
            self.backward,
        )

    def dumps(self, width: int | None = None, height: int | None = None) -> str:
        """Text grid with the highest row first, ``#`` infected and ``.`` not, from column 0."""
        top = max(self.rows) if self.rows else 0
        right = max((int(runs[-1, 1]) for runs in self.rows.values()), default=0)
        height = top + 1 if height is None else max(height, top + 1)
        width = right + 1 if width is None else max(width, right + 1)
        lines = []
        for s in range(height - 1, -1, -1):
            line = ["."] * width
            for a, b in self.rows.get(s, ()):
                for r in range(int(a), int(b) + 1):
                    line[r] = "#"
            lines.append("".join(line))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, step: int = 0, backward: bool = False) -> "InfectionSet":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        cells = []
        for i, ln in enumerate(lines):
            s = len(lines) - 1 - i
            cells.extend((r, s) for r, ch in enumerate(ln) if ch == "#")
        return cls.from_cells(cells, step=step, backward=backward)

    def __repr__(self) -> str:
        kind = "backward " if self.backward else ""
        return f"InfectionSet({kind}step={self.step}, cells={len(self)})"


def _runs(cols: np.ndarray) -> np.ndarray:
    if len(cols) == 0:
        return np.empty((0, 2), dtype=np.int64)
    breaks = np.flatnonzero(np.diff(cols) > 1)
    starts = np.r_[cols[0], cols[breaks + 1]]
    stops = np.r_[cols[breaks], cols[-1]]
    return np.stack([starts, stops], axis=1).astype(np.int64)


def advance_infection_set(iset: InfectionSet, prim: StepPrimitives, budget: int | None = DEFAULT_CELL_BUDGET) -> InfectionSet:
    """Cells at the next step infected by some member of ``iset``."""
    if iset.is_empty():
        raise ValueError("cannot advance an empty infection set")
    return InfectionSet._from_grid(_advance_grid(iset._to_grid(), prim, budget))


def _forward_grids(start: _Grid, n: int, fam, budget) -> list[_Grid]:
    grids = [start]
    for _ in range(n):
        g = grids[-1]
        jmin, _ = _diag_range(g.M, g.row0, g.col0)
        grids.append(_advance_grid(g, fam.get(g.step + 1, jmin), budget))
    return grids


def infection_set(start: Cell, n: int, prims, budget: int | None = DEFAULT_CELL_BUDGET) -> InfectionSet:
    """Infection set from ``start`` after ``n`` steps."""
    if n < 0:
        raise ValueError("number of steps must be nonnegative")
    fam = as_family(prims)
    g = _Grid.single(start)
    for _ in range(n):
        jmin, _ = _diag_range(g.M, g.row0, g.col0)
        g = _advance_grid(g, fam.get(g.step + 1, jmin), budget)
    return InfectionSet._from_grid(g)


def max_row_full(start: Cell, n: int, prims, budget: int | None = DEFAULT_CELL_BUDGET) -> int:
    """Highest row of the infection set from ``start`` after ``n`` steps."""
    fam = as_family(prims)
    g = _Grid.single(start)
    for _ in range(n):
        jmin, _ = _diag_range(g.M, g.row0, g.col0)
        g = _advance_grid(g, fam.get(g.step + 1, jmin), budget)
    return g.max_row()


def _backward_grids(target: Cell, n: int, fam, budget) -> list[_Grid]:
    if n > target.k:
        raise ValueError("cannot go back past step 0")
    grids = [_Grid.single(target)]
    for _ in range(n):
        g = grids[-1]
        if g.empty():
            grids.append(_Grid(np.zeros((0, 0), dtype=np.uint8), g.row0, 0, g.step - 1))
        else:
            grids.append(_backward_grid(g, fam.get(g.step), budget))
    return grids


def backward_infection_set(target: Cell, n: int, prims, budget: int | None = DEFAULT_CELL_BUDGET) -> InfectionSet:
    """Cells at step ``target.k - n`` that infect ``target``."""
    if n < 0:
        raise ValueError("number of steps must be nonnegative")
    fam = as_family(prims)
    g = _backward_grids(target, n, fam, budget)[-1]
    return InfectionSet._from_grid(g, backward=True)


# ----------------------------------------------------------------------------
# Paths


@dataclass(frozen=True)
class InfectionPath:
    """Cells ordered by increasing step."""

    cells: tuple

    def __post_init__(self):
        cells = tuple(self.cells)
        for a, b in zip(cells, cells[1:]):
            if b.k != a.k + 1 or b.s - a.s not in (0, 1):
                raise ValueError(f"{a} -> {b} is not a step of an infection path")
        object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return len(self.cells)

    def __getitem__(self, i):
        return self.cells[i]

    def __iter__(self):
        return iter(self.cells)

    @property
    def start(self) -> Cell:
        return self.cells[0]

    @property
    def end(self) -> Cell:
        return self.cells[-1]

    def rows(self) -> list[int]:
        return [c.s for c in self.cells]

    def columns(self) -> list[int]:
        return [c.r for c in self.cells]

    def is_valid(self, prims) -> bool:
        fam = as_family(prims)
        return all(infects(fam.get(b.k, a.r + a.s), a, b) for a, b in zip(self.cells, self.cells[1:]))


def _check_direction(direction: str):
    if direction not in ("forward", "reverse"):
        raise ValueError(f"unknown direction {direction!r}")


def _forward_minimal(cell: Cell, n: int, fam) -> list[Cell]:
    cells = [cell]
    r, s, k = cell.r, cell.s, cell.k
    for i in range(n):
        p = fam.get(k + i + 1, r + s)
        r = p.lo(r + s)
        cells.append(Cell(r, s, k + i + 1))
    return cells


def _reverse_minimal(cell: Cell, n: int, fam) -> list[Cell]:
    if n > cell.k:
        raise ValueError("cannot go back past step 0")
    cells = [cell]
    x, s = cell.r, cell.s
    for i in range(n):
        step = cell.k - i
        p = fam.get(step)
        js = [j for j in p.diagonals_covering(x) if j >= s]
        if not js:
            raise ReversePathBlocked(f"no same-row infector of ({x},{s}) at step {step}")
        x = js[0] - s
        cells.append(Cell(x, s, step - 1))
    return cells[::-1]


def minimal_path(start: Cell, n: int, prims, direction: str = "forward") -> InfectionPath:
    """Forward: leftmost same-row infected cell at every step. Reverse: leftmost same-row infector."""
    _check_direction(direction)
    fam = as_family(prims)
    if direction == "forward":
        return InfectionPath(_forward_minimal(start, n, fam))
    return InfectionPath(_reverse_minimal(start, n, fam))


def upper_right_sequence(start: Cell, n: int, prims) -> list[Cell]:
    """Cells ``(r_i, s + i)_{k+i}`` with ``r_{i+1} = hi(layer(r_i + s + i))``; not an infection path."""
    fam = as_family(prims)
    r, s, k = start.r, start.s, start.k
    out = [start]
    for i in range(n):
        r = fam.get(k + i + 1, r + s + i).hi(r + s + i)
        out.append(Cell(r, s + i + 1, k + i + 1))
    return out


def lower_left_bound(r0: int, smin: Sequence[int], prims, k: int = 0) -> list[int]:
    """Columns ``r_i = lo(layer_{k+i}(r_{i-1} + smin_{i-1}))`` bounding paths whose rows dominate ``smin``."""
    fam = as_family(prims)
    r = [r0]
    for i in range(1, len(smin)):
        j = r[-1] + smin[i - 1]
        r.append(fam.get(k + i, j).lo(j))
    return r


def upper_right_bound(r0: int, smax: Sequence[int], prims, k: int = 0) -> list[int]:
    """Columns ``r_i = hi(layer_{k+i}(r_{i-1} + smax_{i-1}))`` bounding paths whose rows stay below ``smax``."""
    fam = as_family(prims)
    r = [r0]
    for i in range(1, len(smax)):
        j = r[-1] + smax[i - 1]
        r.append(fam.get(k + i, j).hi(j))
    return r


def _rightmost_in_row(g: _Grid, s: int) -> int:
    return int(g.row_columns(s)[-1])


def _forward_infector(g: _Grid, prim: StepPrimitives, x: int, y: int) -> Cell:
    """Member of ``g`` infecting ``(x, y)``, maximizing row and then column."""
    js = list(prim.diagonals_covering(x))
    for j in reversed(js):
        c = j - y
        if c >= 0 and g.contains(c, y):
            return Cell(c, y, g.step)
    if y >= 1:
        for j in reversed(js):
            c = j - (y - 1)
            if c >= 0 and g.contains(c, y - 1) and prim.marker(j, x - prim.lo(j)):
                return Cell(c, y - 1, g.step)
    raise AssertionError("backfill found no infector; the infection sets are inconsistent")


def _forward_infectee(g: _Grid, prim: StepPrimitives, cell: Cell) -> Cell:
    """Member of ``g`` infected by ``cell``, minimizing row and then maximizing column."""
    j = cell.r + cell.s
    lo, hi = prim.layer(j)
    for x in range(hi, lo - 1, -1):
        if g.contains(x, cell.s):
            return Cell(x, cell.s, g.step)
    for x in range(hi, lo - 1, -1):
        if prim.marker(j, x - lo) and g.contains(x, cell.s + 1):
            return Cell(x, cell.s + 1, g.step)
    raise AssertionError("backfill found no infectee; the infection sets are inconsistent")


def _greedy_forward(start: Cell, k: int, n: int, fam, cap, budget) -> list[Cell]:
    cells = [start]
    while len(cells) - 1 < n:
        cur = cells[-1]
        if cap is not None and cur.s >= cap:
            cells.extend(_forward_minimal(cur, n - (len(cells) - 1), fam)[1:])
            break
        m = min(k, n - (len(cells) - 1))
        grids = _forward_grids(_Grid.single(cur), m, fam, budget)
        top = grids[-1].max_row()
        block = [Cell(_rightmost_in_row(grids[-1], top), top, grids[-1].step)]
        for i in range(m - 1, 0, -1):
            nxt = block[-1]
            block.append(_forward_infector(grids[i], fam.get(nxt.k), nxt.r, nxt.s))
        block.reverse()
        for c in block:
            cells.append(c)
            if cap is not None and c.s >= cap:
                break
    return cells


def _greedy_reverse(start: Cell, k: int, n: int, fam, cap, budget) -> list[Cell]:
    if n > start.k:
        raise ValueError("cannot go back past step 0")
    cells = [start]  # decreasing steps
    while len(cells) - 1 < n:
        cur = cells[-1]
        remaining = n - (len(cells) - 1)
        if cap is not None and cur.s <= cap:
            cells.extend(_reverse_minimal(cur, remaining, fam)[::-1][1:])
            break
        m = min(k, remaining)
        grids = _backward_grids(cur, m, fam, budget)
        if grids[-1].empty():
            raise ReversePathBlocked(f"the backward set from {cur} empties within {m} steps")
        bottom = grids[-1].min_row()
        chain = [Cell(_rightmost_in_row(grids[-1], bottom), bottom, grids[-1].step)]
        for i in range(m - 1, 0, -1):
            prev = chain[-1]
            chain.append(_forward_infectee(grids[i], fam.get(prev.k + 1), prev))
        # chain runs forward in time from the block bottom; append in decreasing steps
        block = chain[::-1]
        for c in block:
            cells.append(c)
            if cap is not None and c.s <= cap:
                break
    return cells[::-1]


def greedy_path(
    start: Cell,
    k: int,
    n: int,
    prims,
    cap: int | None = None,
    direction: str = "forward",
    budget: int | None = DEFAULT_CELL_BUDGET,
) -> InfectionPath:
    """k-greedy infection path of ``n`` steps, optionally capped at row ``cap``.

    Forward: every ``k`` steps jump to the rightmost cell of the highest row of
    the ``k``-step set, then backfill choosing the highest row and then the
    rightmost column. Reverse: the lowest row of the backward set, backfilled
    by lowest row and then rightmost column. A capped path continues as the
    minimal path once it reaches the cap row.
    """
    if k < 1:
        raise ValueError("block length must be at least 1")
    _check_direction(direction)
    fam = as_family(prims)
    if direction == "forward":
        return InfectionPath(_greedy_forward(start, k, n, fam, cap, budget))
    return InfectionPath(_greedy_reverse(start, k, n, fam, cap, budget))


def greedy_block_endpoints(lam: float, k: int, n: int, seed: int, budget: int | None = DEFAULT_CELL_BUDGET):
    """Block endpoints ``(r_{jk}, s_{jk})`` of the forward k-greedy path from ``(0,0)_0``.

    Primitives are drawn fresh per step, windowed at the leftmost diagonal of
    the current block set, so only the region the path can touch is sampled.
    """
    if n % k:
        raise ValueError("horizon must be a multiple of the block length")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x6E])))
    cur = Cell(0, 0, 0)
    out = [(0, 0)]
    for _ in range(n // k):
        g = _Grid.single(cur)
        for _ in range(k):
            jmin, _ = _diag_range(g.M, g.row0, g.col0)
            prim = StepPrimitives.sampled(lam, seed, g.step + 1, base=jmin, rng=rng)
            g = _advance_grid(g, prim, budget)
        top = g.max_row()
        cur = Cell(_rightmost_in_row(g, top), top, g.step)
        out.append((cur.r, cur.s))
    return out


# ----------------------------------------------------------------------------
# Couplings


def reduced_stream(prim: StepPrimitives) -> Iterator[tuple[int, int]]:
    """Reduced instructions ``(letter, bit)`` encoding ``prim`` from diagonal ``prim.base``."""
    j = prim.base
    while True:
        try:
            prim.ensure(j)
        except PrimitivesExhausted:
            return
        yield LEFT, prim.marker(j, 0)
        for i in range(1, prim.width(j) + 1):
            yield RIGHT, prim.marker(j, i)
        j += 1


def _fam_lam(fam, lam):
    lam = getattr(fam, "lam", None) if lam is None else lam
    if lam is None:
        raise ValueError("the sleep rate is needed to draw fresh primitives")
    return lam


class _ShiftFamily:
    def __init__(self, base, start: Cell, seed: int, lam: float):
        self.base, self.start, self.seed, self.lam = base, start, seed, lam
        self._records: dict[int, StepPrimitives] = {}
        self._r = {start.k: start.r}

    def column(self, step: int) -> int:
        while step not in self._r:
            self.get(max(self._r) + 1)
        return self._r[step]

    def get(self, step: int, min_diagonal: int = 0) -> StepPrimitives:
        if step <= self.start.k:
            raise ValueError("the coupled instance starts after the start step")
        if step not in self._records:
            if step - 1 not in self._r:
                self.get(step - 1)
            shift = self._r[step - 1] + self.start.s
            fresh = StepPrimitives.sampled(self.lam, self.seed, step)
            prim = StepPrimitives(
                _ConcatProducer(fresh, shift, self.base.get(step)),
                provenance=("shift", self.seed, step, shift),
            )
            self._records[step] = prim
            self._r[step] = prim.lo(shift)
        return self._records[step]


def shift_coupling(start: Cell, base_prims, seed: int, n: int, lam: float | None = None):
    """Second instance in which the set from ``start`` is the base set from ``(0,0)`` shifted.

    Step ``i + 1`` of the coupled instance prepends ``r_i + s`` fresh diagonals
    to the base primitives, ``r_i`` being the column of the coupled minimal
    path. Returns the coupled family and that minimal path over ``n`` steps.
    """
    base = as_family(base_prims)
    fam = _ShiftFamily(base, start, seed, _fam_lam(base, lam))
    path = minimal_path(start, n, fam)
    return fam, path


def reverse_coupling(u: int, t: int, m: int, base_prims, seed: int, lam: float | None = None):
    """Couple the base instance with a second one in which backward sets mirror forward sets.

    For ``n = 0 .. m-1`` step ``m - n`` of the second instance is built from
    step ``n + 1`` of the base: while ``Z_n >= 0``, prepend fair left/right
    letters until ``Z_n`` lefts were added, swap left and right in all but the
    first letter, and prepend as many fresh sleep markers. ``Z`` is the signed
    critical geometric branching process with emigration ``t`` from ``Z_0 = u``.
    Returns the second instance (steps ``1..m``) and ``Z_0 .. Z_m``.
    """
    if min(u, t, m) < 0:
        raise ValueError("u, t and m must be nonnegative")
    base = as_family(base_prims)
    lam = _fam_lam(base, lam)
    p = sleep_probability(lam)
    Z = [u]
    records: dict[int, StepPrimitives] = {}
    for n in range(m):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, n, 0x7E])))
        z = Z[-1]
        if z < 0:
            records[m - n] = StepPrimitives.sampled(lam, seed, m - n, rng=rng)
            Z.append(-int(rng.negative_binomial(-z, 0.5)) - t)
            continue
        added = []  # in order of addition; the list front is the last one added
        lefts = 0
        while lefts < z:
            letter = LEFT if rng.random() < 0.5 else RIGHT
            added.append(letter)
            lefts += letter == LEFT
        A = len(added)
        rights = A - lefts
        Z.append(rights - t)
        fresh_bits = (rng.random(A) < p).astype(np.uint8)
        records[m - n] = StepPrimitives.from_reduced(
            _swapped_stream(added[::-1], fresh_bits, reduced_stream(base.get(n + 1))),
            provenance=("reverse", seed, m - n),
        )
    return ListFamily([records[k] for k in range(1, m + 1)], lam=lam), Z


def _swapped_stream(prefix, prefix_bits, tail) -> Iterator[tuple[int, int]]:
    swap = (RIGHT, LEFT)
    first = True
    for letter, bit in zip(prefix, prefix_bits):
        yield (letter if first else swap[letter]), int(bit)
        first = False
    for letter, bit in tail:
        yield (letter if first else swap[letter]), int(bit)
        first = False


# ----------------------------------------------------------------------------
# Estimators


def replica_seeds(seed: int, count: int, tag: int) -> list[int]:
    """Independent 63-bit seeds spawned from ``(seed, tag)``; the estimators use fixed tags."""
    ss = np.random.SeedSequence([seed, tag])
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in ss.spawn(count)]


def rho_k_full(lam: float, k: int, replicas: int, seed: int, budget: int | None = DEFAULT_CELL_BUDGET) -> tuple[float, float]:
    """Mean and standard error of ``X_k / k`` from full infection sets."""
    vals = []
    for rs in replica_seeds(seed, replicas, 0xF0 + k):
        vals.append(max_row_full(Cell(0, 0, 0), k, SampledFamily(lam, rs, windowed=True), budget) / k)
    return jackknife_mean(vals)


def estimate_rho_star(
    lam: float,
    k: int = 32,
    n: int = 4096,
    replicas: int = 64,
    seed: int = 0,
    full_set_ks: Sequence[int] = (),
    full_set_replicas: int = 64,
    budget: int | None = DEFAULT_CELL_BUDGET,
) -> DensityEstimate:
    """Mean of ``s_n / n`` along the k-greedy path, with jackknife error.

    ``extras`` holds the replica spread, ``u_n / (n^2/2)`` and, for each
    ``k'`` in ``full_set_ks``, the full-set rate ``X_k' / k'``.
    """
    if k < 1 or n % k:
        raise ValueError("need k >= 1 and n a multiple of k")
    rates, cols = [], []
    for rs in replica_seeds(seed, replicas, 0xE5):
        r_n, s_n = greedy_block_endpoints(lam, k, n, rs, budget)[-1]
        rates.append(s_n / n)
        cols.append(r_n / (n * n / 2))
    point, se = jackknife_mean(rates)
    extras = {
        "k": k,
        "n": n,
        "lam": lam,
        "sd": float(np.std(rates, ddof=1)) if replicas > 1 else 0.0,
        "column_rate": float(np.mean(cols)),
    }
    for kk in full_set_ks:
        m, e = rho_k_full(lam, kk, full_set_replicas, seed, budget)
        extras[f"full_k{kk}"] = m
        extras[f"full_k{kk}_se"] = e
    return DensityEstimate(point, se, replicas, f"greedy(k={k})", seed, extras)


def bad_event_prob(
    kind: str,
    rho: float,
    n: int,
    replicas: int,
    seed: int,
    lam: float = 1.0,
    budget: int | None = DEFAULT_CELL_BUDGET,
) -> float:
    """Frequency of the cell event (``(0,0)`` reaches row ``rho*n`` in ``n`` steps) or the box event.

    The box event asks the same of any start cell in ``[0, n^2) x [0, n)``
    relative to its own row.
    """
    if kind not in ("cell", "box"):
        raise ValueError(f"unknown event kind {kind!r}")
    if rho <= 0:
        raise ValueError("rho must be positive")
    need = math.ceil(rho * n - 1e-12)
    if need > n:
        return 0.0
    hits = 0
    for rs in replica_seeds(seed, replicas, 0xBE):
        fam = SampledFamily(lam, rs, windowed=kind == "cell")
        if kind == "cell":
            hits += max_row_full(Cell(0, 0, 0), n, fam, budget) >= need
        else:
            hits += box_event(n, need, fam, budget)
    return hits / replicas


def box_event(n: int, need: int, fam, budget=DEFAULT_CELL_BUDGET) -> bool:
    """Whether some start cell in ``[0, n^2) x [0, n)`` gains ``need`` rows in ``n`` steps."""
    for s0 in range(n):
        g = _Grid(np.ones((1, n * n), dtype=np.uint8), s0, 0, 0)
        for _ in range(n):
            g = _advance_grid(g, fam.get(g.step + 1), budget)
        if g.max_row() - s0 >= need:
            return True
    return False


def box_bounds(n: int, rho: float, delta: float) -> tuple[range, range]:
    """Integer columns and rows of ``[(rho/2)(1-d)n^2, (rho/2)(1+d)n^2] x [rho(1-d)n, rho(1+d)n]``."""
    c0 = math.ceil(rho / 2 * (1 - delta) * n * n - 1e-9)
    c1 = math.floor(rho / 2 * (1 + delta) * n * n + 1e-9)
    r0 = math.ceil(rho * (1 - delta) * n - 1e-9)
    r1 = math.floor(rho * (1 + delta) * n + 1e-9)
    return range(c0, c1 + 1), range(r0, r1 + 1)


def box_covered(iset: InfectionSet, cols: range, rows: range) -> bool:
    for s in rows:
        runs = iset.rows.get(s)
        if runs is None:
            return False
        i = int(np.searchsorted(runs[:, 0], cols.start, side="right")) - 1
        if i < 0 or runs[i, 1] < cols.stop - 1:
            return False
    return True


def box_coverage(
    n: int,
    rho: float,
    delta: float,
    replicas: int,
    seed: int,
    lam: float = 1.0,
    budget: int | None = DEFAULT_CELL_BUDGET,
) -> float:
    """Fraction of replicas whose step-``n`` set from ``(0,0)_0`` contains the whole box."""
    if n % 2:
        raise ValueError("n must be even")
    if not rho > 0 or delta < 0 or rho * (1 + delta) > 1:
        raise ValueError("need rho > 0, delta >= 0 and rho (1 + delta) <= 1")
    cols, rows = box_bounds(n, rho, delta)
    if len(cols) == 0 or len(rows) == 0:
        return 1.0
    hits = 0
    for rs in replica_seeds(seed, replicas, 0xB0):
        iset = infection_set(Cell(0, 0, 0), n, SampledFamily(lam, rs, windowed=True), budget)
        hits += box_covered(iset, cols, rows)
    return hits / replicas

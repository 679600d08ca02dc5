"""Dictionary between odometers stable on an interval and layer-percolation paths.

For a key ``(sigma, u0, f0, n)`` the class of extended odometers on ``[0, n]``
with ``u(0) = u0``, net flow ``rt(0) - lt(1) = f0`` and stability on
``[1, n-1]`` is read site by site from the instruction stacks, starting at
the minimal odometer. The non-sleep letters from that point on, each tagged
with whether a sleep follows it, are the reduced instructions of the site;
they are equivalent to the primitives of one layer-percolation step.

``phi`` sends an odometer to the path of cells
``(rt_u(v) - rt_m(v), sleeps on [1, v])_v`` and ``chi`` is its right inverse,
choosing the first index of every run of sleeps.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .instructions import LEFT, RIGHT, SLEEP, FixtureOutOfWindow, FixtureStacks, StackSource
from .layer_percolation import (
    Cell,
    InfectionPath,
    ListFamily,
    StepPrimitives,
    infects,
    reduced_stream,
)
from .odometer_core import Configuration, ExtendedOdometer, minimal_odometer, stability_check

__all__ = [
    "OdometerClassKey",
    "ReducedInstructions",
    "NotInClass",
    "NotAPath",
    "NotAnInfection",
    "EnumerationBudgetExceeded",
    "reduced_from_arw",
    "reduced_primitives_convert",
    "theta",
    "phi",
    "chi",
    "psi_map",
    "enumerate_stable_odometers",
    "enumerate_paths",
    "count_paths",
    "boundary_conditions",
    "stability_at_n",
    "single_sign_change",
    "dumps_odometers",
]


class NotInClass(ValueError):
    """The odometer is not in the class fixed by the key."""


class NotAPath(ValueError):
    """The cell sequence is not an infection path from ``(0,0)_0`` of the right length."""


class NotAnInfection(ValueError):
    """The quadruple is not an infection under the given primitives."""


class EnumerationBudgetExceeded(RuntimeError):
    """The enumeration visited more nodes, or wider blocks, than allowed."""


@dataclass(frozen=True)
class OdometerClassKey:
    sigma: Configuration
    u0: int
    f0: int
    n: int

    def __post_init__(self):
        if self.sigma.has_sleepers():
            raise ValueError("initial configuration must have no sleeping particles")
        if self.n < 1:
            raise ValueError("the interval needs at least two sites")

    def minimal(self, src: StackSource) -> ExtendedOdometer:
        try:
            per_src = _MINIMAL_CACHE.setdefault(src, {})
        except TypeError:
            return minimal_odometer(src, self.sigma, self.u0, self.f0, self.n)
        if self not in per_src:
            per_src[self] = minimal_odometer(src, self.sigma, self.u0, self.f0, self.n)
        return per_src[self]


# stacks are immutable, so the minimal odometer of a key is fixed per source
_MINIMAL_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


# ----------------------------------------------------------------------------
# Reduced instructions


class ReducedInstructions:
    """Letters ``a_i`` in {left, right} with sleep flags ``b_i``, 1-based and lazily extended.

    ``positions[i]`` is the stack index of ``a_i`` when the instructions were
    read from a site, and ``None`` otherwise.
    """

    def __init__(self, triples, provenance: tuple = ()):
        self._it = iter(triples)
        self._a: list[int] = []
        self._b: list[int] = []
        self._pos: list = []
        self._done = False
        self.provenance = provenance

    @classmethod
    def from_lists(cls, a, b) -> "ReducedInstructions":
        a = [int(x) if not isinstance(x, str) else (LEFT if x == "L" else RIGHT) for x in a]
        if len(a) != len(b):
            raise ValueError("a and b must have equal length")
        return cls(((x, int(y), None) for x, y in zip(a, b)), ("lists",))

    def ensure(self, count: int) -> bool:
        while len(self._a) < count and not self._done:
            item = next(self._it, None)
            if item is None:
                self._done = True
                break
            letter, bit, pos = item
            if not self._a and letter != LEFT:
                raise ValueError("reduced instructions must start with a left")
            if letter not in (LEFT, RIGHT) or bit not in (0, 1):
                raise ValueError("letters must be left/right and flags 0/1")
            self._a.append(int(letter))
            self._b.append(int(bit))
            self._pos.append(pos)
        return len(self._a) >= count

    @property
    def materialized(self) -> int:
        return len(self._a)

    def a(self, i: int) -> int:
        if i < 1 or not self.ensure(i):
            raise IndexError(f"a_{i} is not available")
        return self._a[i - 1]

    def b(self, i: int) -> int:
        if i < 1 or not self.ensure(i):
            raise IndexError(f"b_{i} is not available")
        return self._b[i - 1]

    def position(self, i: int):
        if i < 1 or not self.ensure(i):
            raise IndexError(f"a_{i} is not available")
        return self._pos[i - 1]

    def prefix(self, count: int) -> tuple[list[int], list[int]]:
        self.ensure(count)
        return self._a[:count], self._b[:count]

    def letters(self, count: int) -> str:
        a, _ = self.prefix(count)
        return "".join("L" if x == LEFT else "R" for x in a)

    def pairs(self) -> Iterator[tuple[int, int]]:
        i = 0
        while self.ensure(i + 1):
            yield self._a[i], self._b[i]
            i += 1


def _index_chunks(src: StackSource, v: int, start: int, chunk: int = 1024):
    """Consecutive instruction arrays from ``start``; a fixture stops at its window."""
    if isinstance(src, FixtureStacks):
        hi = src.window(v)[1]
        if start > hi:
            raise FixtureOutOfWindow(f"index {start} outside the window at site {v}")
        yield start, np.array([int(src.instruction_at(v, i)) for i in range(start, hi + 1)], dtype=np.int8)
        return
    lo = start
    fetch = getattr(src, "instructions", None)
    while True:
        if fetch is not None:
            arr = np.asarray(fetch(v, lo, lo + chunk - 1), dtype=np.int8)
        else:
            arr = np.array([int(src.instruction_at(v, i)) for i in range(lo, lo + chunk)], dtype=np.int8)
        yield lo, arr
        lo += chunk


def _reduced_triples(src: StackSource, v: int, start: int):
    pending = None
    for lo, arr in _index_chunks(src, v, start):
        for off, ins in enumerate(arr):
            idx = lo + off
            if ins == SLEEP:
                if pending is not None:
                    yield pending[0], 1, pending[1]
                    pending = None
            else:
                if pending is not None:
                    yield pending[0], 0, pending[1]
                pending = (int(ins), idx)


def reduced_from_arw(src: StackSource, key: OdometerClassKey, v: int, minimal=None) -> ReducedInstructions:
    """Non-sleep letters of site ``v`` from the minimal-odometer index on, with sleep flags."""
    if not 1 <= v <= key.n:
        raise ValueError("site must lie in [1, n]")
    m = key.minimal(src) if minimal is None else minimal
    return ReducedInstructions(_reduced_triples(src, v, m(v)), ("arw", v, m(v)))


def _cached_reduced(src: StackSource, key: OdometerClassKey, v: int) -> ReducedInstructions:
    try:
        per_src = _MINIMAL_CACHE.setdefault(src, {})
    except TypeError:
        return reduced_from_arw(src, key, v)
    if (key, v) not in per_src:
        per_src[(key, v)] = reduced_from_arw(src, key, v)
    return per_src[(key, v)]


def reduced_primitives_convert(x):
    """Reduced instructions to step primitives and back; the two maps are inverse."""
    if isinstance(x, ReducedInstructions):
        return StepPrimitives.from_reduced(x.pairs(), provenance=("converted",) + tuple(x.provenance))
    if isinstance(x, StepPrimitives):
        return ReducedInstructions(((a, b, None) for a, b in reduced_stream(x)), ("primitives",))
    raise TypeError("expected ReducedInstructions or StepPrimitives")


class _DirectProducer:
    """Reads widths and markers straight off a stack: ``R_j`` rights between consecutive lefts,
    ``B^j_i`` whether a sleep immediately follows the ``i``-th letter of the diagonal."""

    def __init__(self, src: StackSource, v: int, start: int):
        self._chunks = _index_chunks(src, v, start)
        self._buf = bytearray()
        self._pos = 0
        self._done = False

    def _at(self, i: int):
        while i >= len(self._buf):
            nxt = next(self._chunks, None)
            if nxt is None:
                return None
            self._buf.extend(nxt[1].astype(np.uint8).tobytes())
        return self._buf[i]

    def __call__(self):
        if self._done:
            return None
        Rs, bits = [], []
        while len(Rs) < 256:
            i = self._pos
            if self._at(i) != LEFT:
                raise AssertionError("a diagonal must start at a left")
            diag = []
            j = i
            complete = False
            while True:
                ins = self._at(j)
                if ins is None:
                    break
                if ins != SLEEP:
                    if ins == LEFT and j != i:
                        # the closing left is a reduced letter only once its flag is known
                        complete = self._at(j + 1) is not None
                        break
                    follow = self._at(j + 1)
                    if follow is None:
                        break
                    diag.append(1 if follow == SLEEP else 0)
                j += 1
            if not complete:
                self._done = True
                break
            Rs.append(len(diag) - 1)
            bits.extend(diag)
            self._pos = j
        if not Rs:
            return None
        return np.array(Rs, dtype=np.int64), np.array(bits, dtype=np.uint8)


def theta(src: StackSource, key: OdometerClassKey, check: int = 64) -> ListFamily:
    """Layer-percolation primitives of steps ``1..n`` read from the stacks.

    Each step is built directly from widths and markers between consecutive
    lefts; the first ``check`` diagonals are compared with the conversion of
    the reduced instructions of the same site.
    """
    m = key.minimal(src)
    records = []
    for v in range(1, key.n + 1):
        direct = StepPrimitives(_DirectProducer(src, v, m(v)), provenance=("theta", v, m(v)))
        if check:
            via = reduced_primitives_convert(reduced_from_arw(src, key, v, m))
            last = direct.try_ensure(check - 1)
            last_via = via.try_ensure(check - 1)
            if last != last_via or direct.export(0, last + 1) is not None and any(
                not np.array_equal(x, y) for x, y in zip(direct.export(0, last + 1), via.export(0, last + 1))
            ):
                raise AssertionError(f"direct and reduced primitives disagree at site {v}")
        records.append(direct)
    return ListFamily(records, lam=getattr(src, "lam", None))


# ----------------------------------------------------------------------------
# phi, chi, psi


def _in_class(u: ExtendedOdometer, src: StackSource, key: OdometerClassKey) -> bool:
    if u.start != 0 or u.stop != key.n or u(0) != key.u0:
        return False
    rt0 = src.signed_lr_counts(0, u(0))[1] if u(0) else 0
    lt1 = src.signed_lr_counts(1, u(1))[0] if u(1) else 0
    if rt0 - lt1 != key.f0:
        return False
    return stability_check(u, key.sigma, src, range(1, key.n), "stable")


def phi(u: ExtendedOdometer, src: StackSource, key: OdometerClassKey, prims=None) -> InfectionPath:
    """Path ``(rt_u(v) - rt_m(v), sleeps on [1, v])_v``; asserted to be an infection path."""
    if not _in_class(u, src, key):
        raise NotInClass("odometer is not in the class fixed by the key")
    m = key.minimal(src)
    cells = []
    sleeps = 0
    for v in range(key.n + 1):
        rt_u = src.signed_lr_counts(v, u(v))[1] if u(v) else 0
        rt_m = src.signed_lr_counts(v, m(v))[1] if m(v) else 0
        if v >= 1 and u(v) != 0 and int(src.instruction_at(v, u(v))) == SLEEP:
            sleeps += 1
        cells.append(Cell(rt_u - rt_m, sleeps, v))
    path = InfectionPath(tuple(cells))
    prims = theta(src, key, check=0) if prims is None else prims
    if not path.is_valid(prims):
        raise AssertionError("phi produced a sequence that is not an infection path")
    return path


def psi_map(prim: StepPrimitives, infection) -> tuple[int, int]:
    """Reduced location ``(j, z)`` of an infection ``(r, s) -> (r', s')``.

    ``a_1 .. a_j`` holds ``r + s + 1`` lefts and ``r'`` rights, and ``z = s' - s``.
    """
    r, s, r2, s2 = infection
    if not infects(prim, Cell(r, s, 0), Cell(r2, s2, 1)):
        raise NotAnInfection(f"({r},{s}) does not infect ({r2},{s2})")
    return r + s + 1 + r2, s2 - s


def chi(path: InfectionPath, src: StackSource, key: OdometerClassKey, prims=None) -> ExtendedOdometer:
    """Least odometer mapped to ``path``: the ``j``-th non-sleep letter, or the sleep just after it."""
    prims = theta(src, key, check=0) if prims is None else prims
    cells = list(path)
    if len(cells) != key.n + 1 or cells[0] != Cell(0, 0, 0):
        raise NotAPath("need a path of n steps from (0,0)_0")
    if any(c.k != i for i, c in enumerate(cells)) or not InfectionPath(tuple(cells)).is_valid(prims):
        raise NotAPath("cells do not form an infection path")
    vals = [key.u0]
    for v in range(1, key.n + 1):
        a, b = cells[v - 1], cells[v]
        j, z = psi_map(prims.get(v), (a.r, a.s, b.r, b.s))
        vals.append(_cached_reduced(src, key, v).position(j) + z)
    u = ExtendedOdometer(0, np.array(vals, dtype=np.int64))
    if phi(u, src, key, prims) != InfectionPath(tuple(cells)):
        raise AssertionError("phi(chi(path)) differs from path")
    return u


# ----------------------------------------------------------------------------
# Enumeration


class _SiteCounts:
    """Signed left/right counts of one site on a window of indices, grown on demand."""

    def __init__(self, src: StackSource, v: int):
        self.src, self.v = src, v
        self.fixture = isinstance(src, FixtureStacks)
        self.lo = 0
        self.ins = np.array([LEFT], dtype=np.int8)
        self.lt = np.zeros(1, dtype=np.int64)
        self.rt = np.zeros(1, dtype=np.int64)
        self._grow_up(64)

    def _fetch(self, a: int, b: int) -> np.ndarray:
        fetch = getattr(self.src, "instructions", None)
        if fetch is not None and not self.fixture:
            return np.asarray(fetch(self.v, a, b), dtype=np.int8)
        return np.array([int(self.src.instruction_at(self.v, i)) for i in range(a, b + 1)], dtype=np.int8)

    @property
    def hi(self) -> int:
        return self.lo + len(self.ins) - 1

    def _room(self, cap: int) -> int:
        room = min(len(self.ins), cap - len(self.ins))
        if room <= 0:
            raise EnumerationBudgetExceeded(f"more than {cap} indices exposed at site {self.v}")
        return room

    def _grow_up(self, extra: int):
        a, b = self.hi + 1, self.hi + extra
        if self.fixture:
            b = min(b, self.src.window(self.v)[1])
            if b < a:
                raise FixtureOutOfWindow(f"index {a} outside the window at site {self.v}")
        new = self._fetch(a, b)
        lt = self.lt[-1] + np.cumsum(new == LEFT)
        rt = self.rt[-1] + np.cumsum(new == RIGHT)
        self.ins = np.concatenate([self.ins, new])
        self.lt = np.concatenate([self.lt, lt])
        self.rt = np.concatenate([self.rt, rt])

    def _grow_down(self, extra: int):
        if self.fixture:
            raise FixtureOutOfWindow(f"negative indices at site {self.v} lie outside the fixture")
        a, b = self.lo - extra, self.lo - 1
        new = self._fetch(a, b)
        # lt(u) = lt(u + 1) - [ins(u + 1) is left] for u < 0
        nxt = np.concatenate([new[1:], self.ins[:1]])
        lt = self.lt[0] - np.cumsum((nxt == LEFT)[::-1])[::-1]
        rt = self.rt[0] - np.cumsum((nxt == RIGHT)[::-1])[::-1]
        self.ins = np.concatenate([new, self.ins])
        self.lt = np.concatenate([lt, self.lt])
        self.rt = np.concatenate([rt, self.rt])
        self.lo = a

    def counts(self, u: int, cap: int = 10**4) -> tuple[int, int]:
        while u > self.hi:
            self._grow_up(self._room(cap))
        while u < self.lo:
            self._grow_down(self._room(cap))
        i = u - self.lo
        return int(self.lt[i]), int(self.rt[i])

    def is_sleep(self, u: int) -> bool:
        self.counts(u)
        return u != 0 and int(self.ins[u - self.lo]) == SLEEP

    def block(self, lefts: int, cap: int) -> tuple[int, int]:
        """Indices ``u`` with ``lt(u) == lefts``; the block of 0 always starts at index 0."""
        while self.lt[-1] <= lefts:
            self._grow_up(self._room(cap))
        while self.lt[0] >= lefts and not (self.lo == 0 and lefts == 0):
            self._grow_down(self._room(cap))
        a = int(np.searchsorted(self.lt, lefts, side="left"))
        b = int(np.searchsorted(self.lt, lefts, side="right")) - 1
        return self.lo + a, self.lo + b


def enumerate_stable_odometers(
    src: StackSource,
    key: OdometerClassKey,
    mode: str = "stable",
    canonical: bool = True,
    u0_range=None,
    f0_range=None,
    budget: int = 10**6,
    index_cap: int = 10**4,
) -> list[ExtendedOdometer]:
    """All odometers of the class (stable mode) or all weakly stable ones (weak mode).

    Stable mode follows the decision tree: ``lt(1) = rt(0) - f0`` and, for
    ``1 <= v < n``, stability at ``v`` fixes ``lt(v+1)`` given ``u(v)``; every
    index of the resulting left block is a branch. With ``canonical`` only the
    first index of each run of sleeps is kept.

    Weak mode enumerates nonnegative odometers on ``[0, n]``, zero elsewhere,
    weakly stable on all of ``[0, n]``, with ``u(0)`` in ``u0_range``
    (default ``range(0, 64)``) and optionally ``rt(0) - lt(1)`` in ``f0_range``.
    """
    if mode not in ("stable", "weak"):
        raise ValueError(f"unknown mode {mode!r}")
    n = key.n
    sigma = key.sigma
    sites = [_SiteCounts(src, v) for v in range(n + 1)]
    out: list[ExtendedOdometer] = []
    visited = 0

    def tick():
        nonlocal visited
        visited += 1
        if visited > budget:
            raise EnumerationBudgetExceeded(f"enumeration exceeded {budget} nodes")

    def skip(v: int, u: int, lo: int) -> bool:
        return canonical and u > lo and sites[v].is_sleep(u) and sites[v].is_sleep(u - 1)

    vals = [0] * (n + 1)

    if mode == "stable":
        vals[0] = key.u0
        rt0 = sites[0].counts(key.u0)[1]

        def rec(v: int, lefts: int, rt_prev: int):
            lo, hi = sites[v].block(lefts, index_cap)
            for u in range(lo, hi + 1):
                tick()
                if skip(v, u, lo):
                    continue
                vals[v] = u
                if v == n:
                    out.append(ExtendedOdometer(0, np.array(vals, dtype=np.int64)))
                    continue
                lt_v, rt_v = sites[v].counts(u)
                h = 1 if sites[v].is_sleep(u) else 0
                rec(v + 1, h + lt_v + rt_v - sigma.particles(v) - rt_prev, rt_v)

        rec(1, rt0 - key.f0, rt0)
        return out

    u0_range = range(0, 64) if u0_range is None else u0_range

    def rec_weak(v: int, lefts: int, rt_prev: int):
        if lefts < 0:
            return
        lo, hi = sites[v].block(lefts, index_cap)
        lo = max(lo, 0)
        for u in range(lo, hi + 1):
            tick()
            vals[v] = u
            lt_v, rt_v = sites[v].counts(u)
            asleep = sites[v].is_sleep(u)
            if v == n:
                h = sigma.particles(v) + rt_prev - lt_v - rt_v
                if h == 0 or (h == 1 and asleep):
                    out.append(ExtendedOdometer(0, np.array(vals, dtype=np.int64)))
                continue
            for h in (0, 1) if asleep else (0,):
                rec_weak(v + 1, h - sigma.particles(v) - rt_prev + lt_v + rt_v, rt_v)

    for u0 in u0_range:
        if u0 < 0:
            continue
        tick()
        vals[0] = u0
        lt0, rt0 = sites[0].counts(u0)
        asleep = sites[0].is_sleep(u0)
        for h in (0, 1) if asleep else (0,):
            lt1 = h - sigma.particles(0) + lt0 + rt0
            if f0_range is not None and rt0 - lt1 not in f0_range:
                continue
            if n == 0:
                continue
            rec_weak(1, lt1, rt0)
    return out


def _paths_from(prims, n: int):
    def rec(cell: Cell, acc: list):
        if cell.k == n:
            yield tuple(acc)
            return
        p = prims.get(cell.k + 1)
        j = cell.r + cell.s
        lo, hi = p.layer(j)
        bits = p.markers(j)
        for x in range(lo, hi + 1):
            for ds in (0, 1):
                if ds == 0 or bits[x - lo]:
                    nxt = Cell(x, cell.s + ds, cell.k + 1)
                    acc.append(nxt)
                    yield from rec(nxt, acc)
                    acc.pop()

    yield from rec(Cell(0, 0, 0), [Cell(0, 0, 0)])


def enumerate_paths(prims, n: int) -> list[InfectionPath]:
    """Every infection path of ``n`` steps from ``(0,0)_0``."""
    return [InfectionPath(p) for p in _paths_from(prims, n)]


def count_paths(prims, n: int) -> int:
    """Number of infection paths of ``n`` steps from ``(0,0)_0``, by dynamic programming."""
    layer = {(0, 0): 1}
    for k in range(1, n + 1):
        p = prims.get(k)
        nxt: dict = {}
        for (r, s), c in layer.items():
            lo, hi = p.layer(r + s)
            bits = p.markers(r + s)
            for x in range(lo, hi + 1):
                nxt[(x, s)] = nxt.get((x, s), 0) + c
                if bits[x - lo]:
                    nxt[(x, s + 1)] = nxt.get((x, s + 1), 0) + c
        layer = nxt
    return sum(layer.values())


# ----------------------------------------------------------------------------
# Boundary rules


def boundary_conditions(src: StackSource, sigma: Configuration, f0: int) -> int:
    """Index of the ``(sigma(0) - f0)``-th left at site 0; makes the whole class stable at 0."""
    if f0 >= 0:
        raise ValueError("the left-boundary rule needs f0 < 0")
    return src.nth_left_index(0, sigma.particles(0) - f0)


def stability_at_n(path: InfectionPath, key: OdometerClassKey, src: StackSource) -> bool:
    """Whether ``r_n = f0 + sum_{v=1}^n sigma(v) - rt_m(n) - s_n``."""
    m = key.minimal(src)
    rt_m = src.signed_lr_counts(key.n, m(key.n))[1] if m(key.n) else 0
    mass = sum(key.sigma.particles(v) for v in range(1, key.n + 1))
    end = path[-1]
    return end.r == key.f0 + mass - rt_m - end.s


def single_sign_change(u: ExtendedOdometer, src: StackSource) -> bool:
    """Whether flows ``f_v = rt(v) - lt(v+1)`` are ``<= 0`` then ``>= 1`` on ``[start, stop]``."""
    fl = []
    for v in range(u.start, u.stop + 1):
        rt = src.signed_lr_counts(v, u(v))[1] if u(v) else 0
        lt = src.signed_lr_counts(v + 1, u(v + 1))[0] if u(v + 1) else 0
        fl.append(rt - lt)
    k = 0
    while k < len(fl) and fl[k] <= 0:
        k += 1
    return all(f >= 1 for f in fl[k:])


def dumps_odometers(odometers) -> str:
    """Sorted tuples, one per line."""
    return "".join(f"{t}\n" for t in sorted(u.as_tuple() for u in odometers))

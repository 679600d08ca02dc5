"""Two-sided instruction stacks for one-dimensional activated random walk.

Every site ``v`` carries a stack ``instr_v(i)`` indexed by all integers ``i``,
with ``instr_v(0)`` always a left instruction.  Two sources are provided:

``SeededStacks``
    A counter-based keyed generator.  The instruction at ``(v, i)`` is a pure
    function of ``(master_seed, v, i)`` computed from a splitmix64 hash, so any
    index can be read in O(1) without storing history.
``FixtureStacks``
    Explicit per-site tables, read from the plain-text format
    ``site <v>: <LRS string for indices 1..n>``.

Signed execution counts follow the convention for extended odometers: for
``u >= 0`` they count instructions among indices ``1..u``; for ``u < 0`` they
are the negated counts among ``u+1..0``.
"""

from __future__ import annotations

import enum
import threading
from importlib import resources

import numpy as np
from numba import njit

__all__ = [
    "Instruction",
    "LEFT",
    "RIGHT",
    "SLEEP",
    "FixtureOutOfWindow",
    "StackSource",
    "SeededStacks",
    "FixtureStacks",
    "load_fixture",
    "worked_example",
    "instruction_at",
    "nth_left_index",
    "signed_lr_counts",
]

LEFT = 0
RIGHT = 1
SLEEP = 2

_LETTERS = "LRS"
_CHECKPOINT = 1024

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LOW32 = np.uint64(0xFFFFFFFF)


class Instruction(enum.IntEnum):
    LEFT = LEFT
    RIGHT = RIGHT
    SLEEP = SLEEP

    @property
    def letter(self) -> str:
        return _LETTERS[int(self)]

    @classmethod
    def from_letter(cls, ch: str) -> "Instruction":
        return cls(_LETTERS.index(ch.upper()))


class FixtureOutOfWindow(IndexError):
    """A fixture stack was queried outside its declared index window."""


# ---------------------------------------------------------------------------
# keyed generator kernels (shared by the stabilization engine)
# ---------------------------------------------------------------------------


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def site_key(seed, site):
    return mix64(mix64(np.uint64(seed)) + np.uint64(site) * _GAMMA)


@njit(cache=True)
def draw_instruction(key, left_cut, index):
    """Instruction at ``index`` for the site with hash ``key``.

    Each 64-bit word serves two consecutive indices, 32 bits apiece; words are
    consecutive outputs of a splitmix64 stream seeded by ``key``.
    """
    if index == 0:
        return LEFT
    pair = index >> 1
    word = mix64(key + (np.uint64(pair) + np.uint64(1)) * _GAMMA)
    if index & 1:
        x = word >> np.uint64(32)
    else:
        x = word & _LOW32
    if x < left_cut:
        return LEFT
    if x < np.uint64(2) * left_cut:
        return RIGHT
    return SLEEP


@njit(cache=True)
def _count_range(key, left_cut, lo, hi):
    nl = 0
    nr = 0
    for i in range(lo, hi + 1):
        ins = draw_instruction(key, left_cut, i)
        if ins == LEFT:
            nl += 1
        elif ins == RIGHT:
            nr += 1
    return nl, nr


@njit(cache=True)
def _block_counts(key, left_cut, first, nblocks, size):
    out = np.empty((nblocks, 2), dtype=np.int64)
    for b in range(nblocks):
        lo = first + b * size
        nl, nr = _count_range(key, left_cut, lo, lo + size - 1)
        out[b, 0] = nl
        out[b, 1] = nr
    return out


@njit(cache=True)
def _draw_range(key, left_cut, lo, hi):
    out = np.empty(hi - lo + 1, dtype=np.int8)
    for i in range(lo, hi + 1):
        out[i - lo] = draw_instruction(key, left_cut, i)
    return out


@njit(cache=True)
def _scan_forward(key, left_cut, start, need):
    """Index of the ``need``-th left at or after ``start``."""
    i = start
    while True:
        if draw_instruction(key, left_cut, i) == LEFT:
            need -= 1
            if need == 0:
                return i
        i += 1


@njit(cache=True)
def _scan_backward(key, left_cut, start, need):
    """Index of the ``need``-th left at or before ``start``, moving down."""
    i = start
    while True:
        if draw_instruction(key, left_cut, i) == LEFT:
            need -= 1
            if need == 0:
                return i
        i -= 1


def left_threshold(lam: float) -> np.uint64:
    p_left = 0.5 / (1.0 + lam)
    return np.uint64(int(p_left * 2.0**32))


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------


class StackSource:
    """Common interface of instruction sources."""

    lam: float | None = None

    def instruction_at(self, site: int, index: int) -> Instruction:
        raise NotImplementedError

    def signed_lr_counts(self, site: int, u_value: int) -> tuple[int, int]:
        raise NotImplementedError

    def nth_left_index(self, site: int, n: int) -> int:
        raise NotImplementedError

    def left_block(self, site: int, lefts: int) -> tuple[int, int]:
        """Indices ``u`` whose signed left count equals ``lefts``."""
        return (
            self.nth_left_index(site, lefts),
            self.nth_left_index(site, lefts + 1) - 1,
        )

    def word(self, site: int, lo: int, hi: int) -> str:
        return "".join(self.instruction_at(site, i).letter for i in range(lo, hi + 1))


class SeededStacks(StackSource):
    """Counter-based stacks: left and right w.p. (1/2)/(1+lam), sleep w.p. lam/(1+lam).

    Parameters
    ----------
    master_seed : int
        64-bit seed; the stream at each site is keyed by ``(master_seed, site)``.
    lam : float
        Sleep rate, strictly positive.
    """

    def __init__(self, master_seed: int, lam: float):
        if not lam > 0:
            raise ValueError("sleep rate must be positive")
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.lam = float(lam)
        self.left_cut = left_threshold(self.lam)
        self._keys: dict[int, np.uint64] = {}
        # per site: cumulative (lefts, rights) at multiples of the checkpoint,
        # for indices 1..c*K (positive side) and -c*K..-1 (negative side)
        self._pos: dict[int, np.ndarray] = {}
        self._neg: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return f"SeededStacks(master_seed={self.master_seed}, lam={self.lam})"

    def key(self, site: int) -> np.uint64:
        k = self._keys.get(site)
        if k is None:
            k = np.uint64(site_key(np.uint64(self.master_seed), np.int64(site)))
            self._keys[site] = k
        return k

    def instruction_at(self, site: int, index: int) -> Instruction:
        return Instruction(int(draw_instruction(self.key(site), self.left_cut, np.int64(index))))

    def instructions(self, site: int, lo: int, hi: int) -> np.ndarray:
        return _draw_range(self.key(site), self.left_cut, np.int64(lo), np.int64(hi))

    # checkpoint tables ----------------------------------------------------

    def _table(self, store: dict, site: int, nblocks: int, negative: bool) -> np.ndarray:
        with self._lock:
            tab = store.get(site)
            if tab is None:
                tab = np.zeros((1, 2), dtype=np.int64)
                store[site] = tab
            have = len(tab) - 1
            if have >= nblocks:
                return tab
            grow = max(nblocks - have, have, 4)
            key = self.key(site)
            if negative:
                first = -(have + grow) * _CHECKPOINT
                blocks = _block_counts(key, self.left_cut, first, grow, _CHECKPOINT)[::-1]
            else:
                first = have * _CHECKPOINT + 1
                blocks = _block_counts(key, self.left_cut, first, grow, _CHECKPOINT)
            tab = np.vstack([tab, tab[-1:] + np.cumsum(blocks, axis=0)])
            store[site] = tab
            return tab

    def signed_lr_counts(self, site: int, u_value: int) -> tuple[int, int]:
        u = int(u_value)
        key = self.key(site)
        if u >= 0:
            c = u // _CHECKPOINT
            tab = self._table(self._pos, site, c, False)
            nl, nr = _count_range(key, self.left_cut, c * _CHECKPOINT + 1, u)
            return int(tab[c, 0] + nl), int(tab[c, 1] + nr)
        # indices u+1..0; index 0 is a left
        span = -u - 1  # indices u+1..-1
        c = span // _CHECKPOINT
        tab = self._table(self._neg, site, c, True)
        nl, nr = _count_range(key, self.left_cut, u + 1, -c * _CHECKPOINT - 1)
        return -int(tab[c, 0] + nl + 1), -int(tab[c, 1] + nr)

    def nth_left_index(self, site: int, n: int) -> int:
        n = int(n)
        if n == 0:
            return 0
        key = self.key(site)
        store, negative = (self._pos, False) if n > 0 else (self._neg, True)
        target = abs(n)
        nblocks = 4
        while True:
            tab = self._table(store, site, nblocks, negative)
            if tab[-1, 0] >= target:
                break
            nblocks = 2 * (len(tab) - 1)
        c = int(np.searchsorted(tab[:, 0], target, side="left")) - 1
        rest = target - int(tab[c, 0])
        if n > 0:
            return int(_scan_forward(key, self.left_cut, c * _CHECKPOINT + 1, rest))
        return int(_scan_backward(key, self.left_cut, -c * _CHECKPOINT - 1, rest))


class FixtureStacks(StackSource):
    """Explicit stacks with a declared window ``0..len(table)`` per site.

    Parameters
    ----------
    tables : dict
        ``site -> sequence of Instruction`` for indices ``1..n``.
    lam : float, optional
        Nominal sleep rate, carried for bookkeeping only.
    """

    def __init__(self, tables: dict[int, "list[int] | str"], lam: float | None = None):
        self.tables: dict[int, np.ndarray] = {}
        for site, seq in tables.items():
            if isinstance(seq, str):
                seq = [Instruction.from_letter(ch) for ch in seq]
            self.tables[int(site)] = np.asarray([int(x) for x in seq], dtype=np.int8)
        self.lam = lam

    def __repr__(self) -> str:
        return f"FixtureStacks(sites={sorted(self.tables)})"

    def window(self, site: int) -> tuple[int, int]:
        tab = self.tables.get(site)
        return (0, 0 if tab is None else len(tab))

    def _row(self, site: int) -> np.ndarray:
        tab = self.tables.get(site)
        if tab is None:
            raise FixtureOutOfWindow(f"site {site} has no fixture table")
        return tab

    def instruction_at(self, site: int, index: int) -> Instruction:
        if index == 0:
            return Instruction.LEFT
        tab = self._row(site)
        if index < 0 or index > len(tab):
            raise FixtureOutOfWindow(f"index {index} outside window 0..{len(tab)} at site {site}")
        return Instruction(int(tab[index - 1]))

    def signed_lr_counts(self, site: int, u_value: int) -> tuple[int, int]:
        u = int(u_value)
        if u == 0:
            return 0, 0
        if u < 0:
            raise FixtureOutOfWindow(f"negative index {u + 1} at site {site}")
        tab = self._row(site)
        if u > len(tab):
            raise FixtureOutOfWindow(f"index {u} outside window 0..{len(tab)} at site {site}")
        head = tab[:u]
        return int(np.count_nonzero(head == LEFT)), int(np.count_nonzero(head == RIGHT))

    def nth_left_index(self, site: int, n: int) -> int:
        n = int(n)
        if n == 0:
            return 0
        if n < 0:
            raise FixtureOutOfWindow(f"left number {n} lies at negative indices at site {site}")
        tab = self._row(site)
        idx = np.flatnonzero(tab == LEFT)
        if len(idx) < n:
            raise FixtureOutOfWindow(f"fewer than {n} lefts in window at site {site}")
        return int(idx[n - 1]) + 1

    def dumps(self) -> str:
        return "".join(
            f"site {v}: {''.join(_LETTERS[int(x)] for x in self.tables[v])}\n" for v in sorted(self.tables)
        )


def load_fixture(text: str, lam: float | None = None) -> FixtureStacks:
    """Parse ``site <v>: <LRS...>`` lines; ``#`` starts a comment."""
    tables = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, body = line.partition(":")
        parts = head.split()
        if len(parts) != 2 or parts[0] != "site":
            raise ValueError(f"malformed fixture line: {raw!r}")
        word = body.strip().upper()
        if set(word) - set(_LETTERS):
            raise ValueError(f"unknown instruction letter in {raw!r}")
        tables[int(parts[1])] = word
    return FixtureStacks(tables, lam=lam)


def worked_example() -> FixtureStacks:
    """The bundled three-site example table (sites 0, 1, 2; indices 1..25)."""
    text = resources.files("arwlab").joinpath("data/worked_example.txt").read_text()
    return load_fixture(text)


def instruction_at(src: StackSource, site: int, index: int) -> Instruction:
    return src.instruction_at(site, index)


def nth_left_index(src: StackSource, site: int, n: int) -> int:
    """Index of the ``n``-th left after 0 (``n > 0``), 0 (``n = 0``), or the ``|n|``-th before 0."""
    return src.nth_left_index(site, n)


def signed_lr_counts(src: StackSource, site: int, u_value: int) -> tuple[int, int]:
    return src.signed_lr_counts(site, u_value)

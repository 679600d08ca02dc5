import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from arwlab.instructions import (
    LEFT,
    RIGHT,
    FixtureOutOfWindow,
    Instruction,
    SeededStacks,
    instruction_at,
    load_fixture,
    nth_left_index,
    signed_lr_counts,
    worked_example,
)

from oracles import CODE, FIXTURE_ROWS, counts_by_scan, fixture_counts, fixture_letter

seeds = st.integers(0, 2**63 - 1)
lams = st.floats(0.05, 20.0)


@pytest.fixture(scope="module")
def fx():
    return worked_example()


def test_fixture_table_matches_bundled_file(fx):
    for v, row in FIXTURE_ROWS.items():
        assert fx.window(v) == (0, len(row))
        assert "".join(fx.instruction_at(v, i).letter for i in range(1, len(row) + 1)) == row


def test_fixture_examples(fx):
    assert instruction_at(fx, 0, 2) == Instruction.RIGHT
    assert nth_left_index(fx, 1, 7) == 19
    assert nth_left_index(fx, 2, 5) == 11
    assert signed_lr_counts(fx, 0, 20) == (7, 9)
    assert nth_left_index(fx, 2, 0) == 0


def test_fixture_window_errors(fx):
    with pytest.raises(FixtureOutOfWindow):
        fx.instruction_at(0, 26)
    with pytest.raises(FixtureOutOfWindow):
        fx.instruction_at(0, -1)
    with pytest.raises(FixtureOutOfWindow):
        fx.signed_lr_counts(1, -1)
    with pytest.raises(FixtureOutOfWindow):
        fx.nth_left_index(2, 50)


def test_fixture_round_trip(fx):
    again = load_fixture(fx.dumps())
    for v in FIXTURE_ROWS:
        assert again.window(v) == fx.window(v)
        assert all(again.instruction_at(v, i) == fx.instruction_at(v, i) for i in range(26))


def test_fixture_counts_against_scan(fx):
    for v in FIXTURE_ROWS:
        for u in range(26):
            assert fx.signed_lr_counts(v, u) == fixture_counts(v, u)


@given(seed=seeds, lam=lams, site=st.integers(-10**6, 10**6))
def test_index_zero_is_left(seed, lam, site):
    assert SeededStacks(seed, lam).instruction_at(site, 0) == Instruction.LEFT


@given(seed=seeds, lam=lams, site=st.integers(-1000, 1000), index=st.integers(-10**9, 10**9))
def test_seeded_pure_function(seed, lam, site, index):
    a = SeededStacks(seed, lam).instruction_at(site, index)
    b = SeededStacks(seed, lam).instruction_at(site, index)
    assert a == b


def test_any_source_trivial_counts():
    src = SeededStacks(5, 1.0)
    for v in (-3, 0, 7):
        assert src.signed_lr_counts(v, 0) == (0, 0)
        assert src.signed_lr_counts(v, -1) == (-1, 0)
        assert src.nth_left_index(v, 0) == 0
    assert src.instruction_at(3, 5) == src.instruction_at(3, 5)


@given(seed=seeds, lam=lams, site=st.integers(-50, 50), u=st.integers(-3000, 3000))
def test_seeded_counts_against_scan(seed, lam, site, u):
    src = SeededStacks(seed, lam)
    expect = counts_by_scan(lambda i: int(src.instruction_at(site, i)), u)
    assert src.signed_lr_counts(site, u) == expect


@given(seed=seeds, lam=lams, site=st.integers(-50, 50), a=st.integers(0, 5000), d=st.integers(0, 5000))
def test_counts_additive(seed, lam, site, a, d):
    src = SeededStacks(seed, lam)
    b = a + d
    la, ra = src.signed_lr_counts(site, a)
    lb, rb = src.signed_lr_counts(site, b)
    arr = src.instructions(site, a + 1, b)
    assert (lb - la, rb - ra) == (int((arr == LEFT).sum()), int((arr == RIGHT).sum()))


@given(seed=seeds, lam=lams, site=st.integers(-50, 50), n=st.integers(-400, 400))
def test_nth_left_monotone_and_left(seed, lam, site, n):
    src = SeededStacks(seed, lam)
    i, j = src.nth_left_index(site, n), src.nth_left_index(site, n + 1)
    assert i < j
    assert src.instruction_at(site, i) == Instruction.LEFT
    # the n-th left carries signed left count n, also for n <= 0
    assert src.signed_lr_counts(site, i)[0] == n


def test_nth_left_against_scan():
    src = SeededStacks(11, 0.7)
    for v in (0, 4):
        lefts = [i for i in range(1, 5000) if src.instruction_at(v, i) == Instruction.LEFT]
        for n in range(1, 200):
            assert src.nth_left_index(v, n) == lefts[n - 1]
        neg = [i for i in range(-1, -5000, -1) if src.instruction_at(v, i) == Instruction.LEFT]
        for n in range(1, 200):
            assert src.nth_left_index(v, -n) == neg[n - 1]


def test_block_reads_match_pointwise():
    src = SeededStacks(2024, 1.3)
    arr = src.instructions(9, -700, 1400)
    assert list(arr) == [int(src.instruction_at(9, i)) for i in range(-700, 1401)]


@pytest.mark.parametrize("lam", [0.25, 1.0, 4.0])
def test_marginal_law_chi_square(lam):
    src = SeededStacks(99, lam)
    # distinct (v, i) pairs with i != 0
    draws = np.concatenate([src.instructions(v, 1, 10**4) for v in range(10)])
    counts = np.bincount(draws, minlength=3)
    p = np.array([0.5, 0.5, lam]) / (1 + lam)
    assert stats.chisquare(counts, p * len(draws)).pvalue > 1e-3


def test_sites_and_seeds_independent():
    a = SeededStacks(1, 1.0).instructions(0, 1, 10**5)
    b = SeededStacks(1, 1.0).instructions(1, 1, 10**5)
    c = SeededStacks(2, 1.0).instructions(0, 1, 10**5)
    for x, y in ((a, b), (a, c)):
        table = np.zeros((3, 3))
        np.add.at(table, (x, y), 1)
        assert stats.chi2_contingency(table).pvalue > 1e-3


def test_fixture_letters_helper_consistent(fx):
    for v in FIXTURE_ROWS:
        for i in range(26):
            assert int(fx.instruction_at(v, i)) == CODE[fixture_letter(v, i)]

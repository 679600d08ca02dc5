import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from arwlab.branching import (
    ExactLaw,
    MigrationSchedule,
    calibrate_envelope,
    geometric_sum_sample,
    gw_exact_law,
    janson_bound,
    signed_gw_batch,
    signed_gw_simulate,
    tail_envelope,
)
from arwlab.experiments import branching_law_checks, janson_checks


def naive_gw(x0, e, rng):
    # direct transcription of the signed update with numpy's geometric on {1, 2, ...}
    xs = [x0]
    x = x0
    for ej in e:
        total = int((rng.geometric(0.5, abs(x)) - 1).sum()) if x else 0
        x = (total if x > 0 else -total) + ej
        xs.append(x)
    return xs


def test_schedule_validation():
    with pytest.raises(ValueError):
        MigrationSchedule([1, -3], e_max=2)
    s = MigrationSchedule([1, -2, 0])
    assert s.e_max == 2
    assert s.mean_path(5, 3).tolist() == [5, 6, 4, 4]
    with pytest.raises(ValueError):
        s.array(4)


def test_zero_start_without_migration_stays_zero():
    t = signed_gw_simulate(0, MigrationSchedule.constant(0, 20), 20, seed=3)
    assert t.X.tolist() == [0] * 21 and t.x0 == 0


def test_simulate_is_batch_row_zero():
    sched = MigrationSchedule([1, -1, 2, 0, -3, 1])
    a = signed_gw_simulate(4, sched, 6, seed=11).X
    b = signed_gw_batch(4, sched, 6, 5, seed=11)
    assert np.array_equal(a, b[0])
    assert np.array_equal(b, signed_gw_batch(4, sched, 6, 5, seed=11))


def test_matches_naive_transcription_in_law():
    sched = MigrationSchedule([2, -1, 0, 1, -2, 1, 0, -1])
    runs = 20_000
    ours = signed_gw_batch(-3, sched, 8, runs, seed=1)[:, -1]
    rng = np.random.default_rng(2)
    naive = np.array([naive_gw(-3, sched.e, rng)[-1] for _ in range(runs)])
    assert stats.ks_2samp(ours, naive).pvalue > 1e-3


def test_exact_law_descriptors():
    assert gw_exact_law(1).survival == 0.5
    assert gw_exact_law(0).survival == 1.0
    law = gw_exact_law(9, "unit-immigration")
    assert law.survival == 1.0 and law.p == pytest.approx(0.1)
    assert law.mean == pytest.approx(10.0)
    assert float(law.pmf(1)) == pytest.approx(0.1)
    assert float(law.pmf(0)) == 0.0
    with pytest.raises(ValueError):
        gw_exact_law(-1)
    with pytest.raises(ValueError):
        gw_exact_law(3, "bogus")


def test_exact_law_pmf_sums_to_one():
    law = ExactLaw(0.25, 0.2)
    xs = np.arange(0, 400)
    assert law.pmf(xs).sum() == pytest.approx(1.0)
    assert float(law.sf(0)) == pytest.approx(0.25)
    assert float(law.sf(3)) == pytest.approx(law.pmf(np.arange(4, 400)).sum())


def test_survival_probabilities():
    runs = 100_000
    X = signed_gw_batch(1, MigrationSchedule.constant(0, 9), 9, runs, seed=5)
    for j in (1, 4, 9):
        p = 1.0 / (j + 1)
        se = math.sqrt(p * (1 - p) / runs)
        assert abs((X[:, j] > 0).mean() - p) < 3 * se


def test_exact_law_chi_square_suite():
    out = branching_law_checks(runs=100_000, seed=0)
    assert all(v[2] for v in out.values()), out


def test_envelope_shape():
    assert tail_envelope(10, 1, 0, 0.0, c=0.3, C=2.0) == 2.0
    ts = np.linspace(0, 200, 50)
    vals = tail_envelope(10, 1, 0, ts, c=0.3, C=2.0)
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(ValueError):
        tail_envelope(10, 0, 0, 1.0)
    with pytest.raises(ValueError):
        tail_envelope(10, 1, 0, -1.0)


def test_envelope_calibrate_then_validate():
    j, runs = 100, 20_000
    sched = MigrationSchedule.constant(1, j)
    mu = sched.mean_path(0, j)[-1]
    train = signed_gw_batch(0, sched, j, runs, seed=21)[:, -1] - mu
    test = signed_gw_batch(0, sched, j, runs, seed=22)[:, -1] - mu
    ts = np.linspace(0, 6 * train.std(), 40)
    c, C = calibrate_envelope(train, j, 1, 0, ts)
    assert c > 0
    env = tail_envelope(j, 1, 0, ts, c, C)
    up = np.array([(test >= t).mean() for t in ts])
    lo = np.array([(test <= -t).mean() for t in ts])
    assert np.all(np.maximum(up, lo) <= env)


@given(st.integers(0, 2**32), st.integers(-5, 5), st.lists(st.integers(-3, 3), min_size=1, max_size=12))
def test_mean_identity_random_schedules(seed, x0, e):
    runs = 10_000
    sched = MigrationSchedule(e)
    X = signed_gw_batch(x0, sched, len(e), runs, seed)[:, -1]
    se = X.std(ddof=1) / math.sqrt(runs)
    target = sched.mean_path(x0, len(e))[-1]
    assert abs(X.mean() - target) <= max(3 * se, 1e-9) + 1e-12 * abs(target)


def test_janson_bound_values():
    assert janson_bound(0.5, 10.0, 0.0) == 1.0
    assert janson_bound(0.5, 10.0, 10.0) == pytest.approx(math.exp(-0.5 * 100 / 40))


def test_geometric_sum_support():
    s = geometric_sum_sample([0.5, 0.2, 0.9], 1000, seed=0)
    assert s.min() >= 3
    assert abs(s.mean() - (2 + 5 + 1 / 0.9)) < 0.5


def test_janson_never_violated():
    rep = janson_checks(sets=20, samples=100_000, seed=0)
    assert len(rep) == 20
    assert all(r["ok"] for r in rep), rep

import types

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aequity import stats
from aequity.curves import LearningCurve, SampleGrid
from aequity.errors import DataError
from aequity.stats import (aeq_difference, aeq_from_curve, aeq_per_bootstrap, one_way_anova, percentile_ci,
                           second_differences, welch_t_test)
from oracles import anova_by_hand, anova_cases, percentile_rank, t_two_sided_p, welch_by_hand, welch_cases

GRID = (16, 32, 64, 128, 256)


def estimate(values, grid=GRID, **desc):
    values = np.asarray(values, dtype=float)
    return stats.AeqEstimate(desc, values, float(values.mean()), percentile_ci(values), values.size, (), grid)


def test_hand_curve():
    L = [1.00, 0.98, 0.60, 0.55, 0.54]
    assert np.allclose(second_differences(L), [-0.36, 0.33, 0.04])
    vals, flat = aeq_per_bootstrap(L, GRID)
    assert vals[0] == 5.0 and not flat[0]


def test_flat_curve():
    curve = LearningCurve(SampleGrid(GRID), np.ones((2, 5)), {"group": "A"}, (1, 2))
    est = aeq_from_curve(curve)
    assert list(est.per_bootstrap) == [5.0, 5.0]
    assert any("flat" in f for f in est.flags)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=5, max_size=5),
       st.sampled_from([0.125, 0.5, 2.0, 4.0]))
def test_power_of_two_scaling_is_exact(L, k):
    # scaling by a power of two is exact in floating point, so the argmin cannot move
    base, _ = aeq_per_bootstrap(L, GRID)
    scaled, _ = aeq_per_bootstrap(np.asarray(L) * k, GRID)
    assert base[0] == scaled[0]


def test_exact_offset_invariance_on_dyadic_losses():
    rng = np.random.default_rng(0)
    for _ in range(200):
        L = rng.integers(0, 64, 7) / 8.0
        grid = tuple(16 * 2**i for i in range(7))
        base, _ = aeq_per_bootstrap(L, grid)
        for c in (0.5, 3.0, -2.25):
            assert aeq_per_bootstrap(L + c, grid)[0][0] == base[0]
        for k in (0.5, 2.0, 3.0):
            assert aeq_per_bootstrap(L * k, grid)[0][0] == base[0]


def test_ties_go_to_smallest_n():
    L = [1.0, 0.5, 0.5, 0.0, 0.0]  # D = [0.5, -0.5, 0.5]; tie-free
    assert aeq_per_bootstrap(L, GRID)[0][0] == 6.0
    L = [2.0, 1.0, 1.0, 1.0, 0.0]  # D = [1, 0, -1]
    assert aeq_per_bootstrap(L, GRID)[0][0] == 7.0
    L = [1.0, 0.0, 1.0, 0.0, 1.0]  # D = [2, -2, 2]; shift argmin ties
    L2 = [0.0, 1.0, 0.0, 1.0, 0.0]  # D = [-2, 2, -2]
    assert aeq_per_bootstrap(L, GRID)[0][0] == 6.0
    assert aeq_per_bootstrap(L2, GRID)[0][0] == 5.0


def test_interior_range_and_ci_order():
    rng = np.random.default_rng(0)
    curve = LearningCurve(SampleGrid(GRID), rng.random((30, 5)), {}, tuple(range(30)))
    est = aeq_from_curve(curve)
    assert est.per_bootstrap.min() >= 5 and est.per_bootstrap.max() <= 7
    assert est.ci95[0] <= est.mean <= est.ci95[1]


def test_bootstrap_mean():
    assert estimate([5, 5, 6, 6]).mean == 5.5


def test_smoothing_option():
    L = np.array([[1.0, 0.9, 0.2, 0.25, 0.1, 0.08]])
    grid = (16, 32, 64, 128, 256, 512)
    plain, _ = aeq_per_bootstrap(L, grid)
    smooth, _ = aeq_per_bootstrap(L, grid, smooth=True)
    assert plain[0] == 5.0 and smooth[0] in (5.0, 6.0, 7.0, 8.0)
    assert np.allclose(stats.smooth3([3.0, 6.0, 9.0]), [4.5, 6.0, 7.5])


def test_percentile_ci_ranks():
    lo, hi = percentile_ci(np.arange(1, 101))
    assert lo == pytest.approx(3.475) and hi == pytest.approx(97.525)
    vals = list(range(1, 101))
    assert lo == pytest.approx(percentile_rank(vals, 2.5))
    with pytest.raises(DataError):
        percentile_ci([1.0])


@pytest.mark.parametrize("case", list(range(20)))
def test_welch_matches_integration_oracle(case):
    x, y = list(welch_cases())[case]
    t, df, p, _ = welch_t_test(x, y)
    t0, df0, p0 = welch_by_hand(x, y)
    assert t == pytest.approx(t0, rel=1e-10)
    assert df == pytest.approx(df0, rel=1e-10)
    assert abs(p - p0) < 1e-6


def test_welch_reference_point():
    assert t_two_sided_p(2.0, 10) == pytest.approx(0.0734, abs=1e-3)
    assert stats.sps.t.sf(2.0, 10) * 2 == pytest.approx(t_two_sided_p(2.0, 10), abs=1e-9)


def test_welch_symmetry_and_identity():
    x, y = [1.0, 2.0, 4.0], [2.0, 5.0, 7.0, 8.0]
    t1, df1, p1, _ = welch_t_test(x, y)
    t2, df2, p2, _ = welch_t_test(y, x)
    assert t1 == -t2 and p1 == p2 and df1 == df2
    t, _, p, _ = welch_t_test(x, x)
    assert t == 0 and p == 1


@pytest.mark.parametrize("case", list(range(20)))
def test_anova_matches_integration_oracle(case):
    groups = list(anova_cases())[case]
    F, p, _ = one_way_anova(groups)
    F0, p0 = anova_by_hand(groups)
    assert F == pytest.approx(F0, rel=1e-9)
    assert abs(p - p0) < 1e-6


def test_anova_degenerate_cases():
    F, p, _ = one_way_anova([[1, 2, 3], [1, 2, 3]])
    assert F == 0 and p == 1
    F, p, flags = one_way_anova([[2, 2], [3, 3]])
    assert p == 0 and flags
    with pytest.raises(DataError):
        one_way_anova([[1, 2]])


def test_difference_cases():
    a = estimate([5, 6, 7, 6])
    same = aeq_difference(a, a)
    assert same.difference == 0 and same.p == 1
    d = aeq_difference(estimate([5, 5, 5]), estimate([7, 7, 7]))
    assert d.difference == -2 and d.p == 0 and "degenerate variance" in d.flags
    d = aeq_difference(estimate([5, 6, 5, 6, 7]), estimate([7, 8, 7, 8, 7]))
    assert d.ci95[0] <= d.difference <= d.ci95[1] < 0
    assert 0 <= d.p <= 1


def test_compute_aeq_checks_view_size():
    from conftest import make_dataset

    ds = make_dataset(n=20)
    cfg = types.SimpleNamespace(min_sample_size=16, max_sample_size=128)
    with pytest.raises(DataError, match="min_sample_size"):
        stats.compute_aeq(ds, "A", None, cfg)


def test_compute_aeq_self_joint():
    from aequity.dataset import RunConfig, standardize
    from aequity.synth import SynthSpec, generate

    ds = standardize(generate(SynthSpec("complexity", n_per_group=400, seed=3))[0])
    cfg = RunConfig(data_path="-", demographics_col=["group"], outcome_cols=["outcome"], out_data="-",
                    start_seed=1, input_dim=20, max_sample_size=256, root_dir="-", bootstraps=6)
    single = stats.compute_aeq(ds, "A", ("outcome", 1.0), cfg)
    joint = stats.compute_aeq(ds, ("A", "A"), ("outcome", 1.0), cfg)
    assert single.descriptor == {"group": "A", "label": ("outcome", 1.0)}
    assert joint.descriptor["joint"]
    overlap = min(single.ci95[1], joint.ci95[1]) >= max(single.ci95[0], joint.ci95[0])
    assert overlap


def test_aeq_table(tmp_path):
    path = stats.write_aeq_table([("y", "A", estimate([5, 6]))], tmp_path / "t.tsv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].split("\t") == list(stats.AEQ_COLUMNS)
    assert lines[1].startswith("y\tA\t5.500000")

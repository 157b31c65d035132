import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import binomial_bound
from stochhom.errors import AliasingError, ConfigurationError
from stochhom.media import (RandomMedium, ergodic_average, expectation, fit_loglog_slope,
                            sample_realization)


def test_single_phase_is_constant():
    med = RandomMedium(1, ("only",), (1.0,), seed=9)
    r = sample_realization(med, (0, 3), 0.1, 0.01)
    assert set(r.values.tolist()) == {"only"}


def test_phase_is_the_cell_containing_the_shifted_point():
    med = RandomMedium(1, (1, 2), (0.5, 0.5), seed=5, torus_shift=(0.3,))
    eta = 0.1
    r = sample_realization(med, (0, 1), eta, 0.01)
    x = r.coords[0]
    cells = np.floor(x / eta + 0.3 + 1e-9).astype(int)
    assert np.array_equal(r.phase_index, med.cell_phase_index(cells))
    again = sample_realization(med, (0, 1), eta, 0.01)
    assert np.array_equal(r.phase_index, again.phase_index)


def test_realization_is_piecewise_constant_on_eta_cells():
    med = RandomMedium.two_phase(0.5, seed=3)
    eta = 0.25
    r = sample_realization(med, (0, 4), eta, eta / 8)
    blocks = r.phase_index[:-1].reshape(-1, 8)
    assert np.all(blocks == blocks[:, :1])


def test_aliasing_refused():
    med = RandomMedium.two_phase(0.5)
    with pytest.raises(AliasingError):
        sample_realization(med, (0, 1), 0.01, 0.02)


def test_invalid_media():
    with pytest.raises(ConfigurationError):
        RandomMedium(1, (1, 2), (0.5, 0.6))
    with pytest.raises(ConfigurationError):
        RandomMedium(3, (1,), (1.0,))
    with pytest.raises(ConfigurationError):
        RandomMedium(1, (1, 1), (0.5, 0.5))


def test_empirical_frequency_million_cells():
    med = RandomMedium.two_phase(0.5, seed=2024)
    idx = med.cell_phase_index(np.arange(10 ** 6))
    freq = float(np.mean(idx == 0))
    assert abs(freq - 0.5) <= binomial_bound(10 ** 6)


def test_frequencies_chi_square_three_phases():
    from scipy import stats
    probs = (0.2, 0.3, 0.5)
    med = RandomMedium(2, ("a", "b", "c"), probs, seed=17)
    cells = np.stack(np.meshgrid(np.arange(300), np.arange(300), indexing="ij"), -1)
    counts = np.bincount(med.cell_phase_index(cells).ravel(), minlength=3)
    chi2 = stats.chisquare(counts, np.array(probs) * counts.sum())
    assert chi2.pvalue > 1e-3


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 64 - 1), a=st.integers(-10 ** 6, 10 ** 6),
       b=st.integers(-10 ** 6, 10 ** 6))
def test_group_property_and_overlap_agreement(seed, a, b):
    med = RandomMedium.two_phase(0.5, dimension_m=2, seed=seed)
    base = np.stack(np.meshgrid(np.arange(6), np.arange(5), indexing="ij"), -1)
    # translating by (a, b) and then by (-a, -b) is the identity
    shifted = med.cell_phase_index(base + np.array([a, b]))
    composed = med.cell_phase_index((base + np.array([a, b])) - np.array([a, b]))
    assert np.array_equal(composed, med.cell_phase_index(base))
    # a window sampled directly equals the corresponding slice of a larger window
    big = np.stack(np.meshgrid(np.arange(a, a + 10), np.arange(b, b + 10), indexing="ij"), -1)
    assert np.array_equal(med.cell_phase_index(big)[:6, :5], shifted)


def test_realizations_at_different_scales_agree_on_overlaps():
    med = RandomMedium.two_phase(0.4, seed=77)
    coarse = sample_realization(med, (0, 2), 0.5, 0.125)
    fine = sample_realization(med, (1, 2), 0.5, 0.125)
    assert np.array_equal(coarse.phase_index[8:], fine.phase_index)


def test_stationarity_of_pair_patterns():
    med = RandomMedium.two_phase(0.5, seed=11).randomized_shift()
    counts = []
    for start in (0, 10 ** 5, 7 * 10 ** 6):
        idx = med.cell_phase_index(np.arange(start, start + 200001))
        pairs = idx[:-1] * 2 + idx[1:]
        counts.append(np.bincount(pairs, minlength=4) / pairs.size)
    counts = np.array(counts)
    assert np.all(np.abs(counts - 0.25) < binomial_bound(2 * 10 ** 5, 0.25, 4))


def test_randomized_shift_is_seed_derived_and_in_unit_cube():
    a = RandomMedium.two_phase(0.5, dimension_m=2, seed=1).randomized_shift()
    b = RandomMedium.two_phase(0.5, dimension_m=2, seed=1).randomized_shift()
    c = RandomMedium.two_phase(0.5, dimension_m=2, seed=2).randomized_shift()
    assert a.torus_shift == b.torus_shift != c.torus_shift
    assert all(0 <= s < 1 for s in a.torus_shift)


def test_expectation_examples():
    med = RandomMedium.two_phase(0.5)
    assert expectation(med, {1: 1.0, 2: 0.0}) == 0.5
    assert expectation(med, {1: 1.0, 2: 4.0}) == 2.5
    e = expectation(med, lambda th: 1.0 / {1: 1.0, 2: 4.0}[th])
    assert e == pytest.approx(0.625)
    assert 1 / e == pytest.approx(1.6)


def test_ergodic_average_constant_and_indicator():
    med = RandomMedium.two_phase(0.5, seed=8)
    recs = ergodic_average(med, lambda th: 3.0, [10, 100, 1000])
    assert all(r.average == pytest.approx(3.0) and r.error_to_expectation < 1e-12 for r in recs)
    recs = ergodic_average(med, {1: 1.0, 2: 0.0}, [1e2, 1e3, 1e4, 1e5])
    for r in recs:
        assert r.error_to_expectation <= 3 * 0.5 / np.sqrt(r.window_size)


def test_ergodic_average_is_exact_integral_with_shift():
    med = RandomMedium.two_phase(0.5, seed=4).with_shift((0.25,))
    W = 7.5
    x = (np.arange(750000) + 0.5) * (W / 750000)
    vals = (med.phase_index_at(x) == 0).astype(float)
    rec = ergodic_average(med, {1: 1.0, 2: 0.0}, [W])[0]
    assert rec.average == pytest.approx(vals.mean(), abs=1e-5)


def test_ergodic_errors_shrink_in_2d():
    errs = []
    for s in range(8):
        med = RandomMedium.two_phase(0.5, dimension_m=2, seed=s)
        errs.append([r.error_to_expectation for r in
                     ergodic_average(med, {1: 1.0, 2: 0.0}, [10, 100, 1000])])
    med_err = np.median(errs, axis=0)
    assert med_err[-1] < med_err[0]
    assert fit_loglog_slope([10, 100, 1000], med_err) < -0.5


def test_ergodic_window_sizes_must_increase():
    with pytest.raises(ConfigurationError):
        ergodic_average(RandomMedium.two_phase(0.5), {1: 1, 2: 0}, [10, 5])


def test_fit_loglog_slope_exact():
    x = np.array([1.0, 10.0, 100.0])
    assert fit_loglog_slope(x, 3 * x ** -0.5) == pytest.approx(-0.5)


def test_realization_csv(tmp_path):
    med = RandomMedium.two_phase(0.5, dimension_m=2, seed=12)
    r = sample_realization(med, [(0, 1), (0, 1)], 0.5, 0.25)
    path = tmp_path / "r.csv"
    r.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# seed=12")
    assert lines[1] == "x,y,phase"
    assert len(lines) == 2 + 25

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from cadlab.noisesim import (
    NoiseSimConfig,
    apply_strategy,
    bin_coherence,
    corrupt_dataset,
    corrupt_labels,
    entropy_of_alpha,
    filter_threshold,
    flip_distribution,
    invert_entropy,
    max_alpha,
    target_entropy_cdf,
)
from cadlab.toydata import AnnotatedSamples


def scipy_entropy(alpha, n):
    return stats.entropy(flip_distribution(0, alpha, n)) / math.log(n)


def scipy_alpha(u, n):
    if u == 0:
        return 0.0
    if u == 1:
        return max_alpha(n)
    return optimize.brentq(lambda a: scipy_entropy(a, n) - u, 0.0, max_alpha(n), xtol=1e-15, rtol=1e-15)


def c_cdf(x, beta, kappa):
    """P(1 - E(T) <= x) for T ~ U[0, 1], by inverting the piecewise-linear map."""
    u = 1.0 - np.asarray(x)
    t = np.where(u <= beta, u * kappa / beta, 1.0 - (1.0 - u) * (1.0 - kappa) / (1.0 - beta))
    return np.clip(1.0 - t, 0.0, 1.0)


@pytest.mark.parametrize("n", [2, 3, 8, 10, 100])
def test_entropy_endpoints_are_exact(n):
    assert entropy_of_alpha(0.0, n) == 0.0
    assert entropy_of_alpha(max_alpha(n), n) == 1.0
    assert invert_entropy(0.0, n) == 0.0
    assert invert_entropy(1.0, n) == max_alpha(n)


@pytest.mark.parametrize("n", [2, 8, 10])
def test_entropy_matches_scipy(n):
    for a in np.linspace(0, max_alpha(n), 37):
        assert abs(entropy_of_alpha(a, n) - scipy_entropy(a, n)) < 1e-13


def test_binary_entropy_closed_form():
    a = 0.11
    assert math.isclose(entropy_of_alpha(a, 2), -(a * math.log2(a) + (1 - a) * math.log2(1 - a)), rel_tol=1e-13)


def test_flip_distribution_shape():
    p = flip_distribution(2, 0.3, 4)
    np.testing.assert_allclose(p, [0.1, 0.1, 0.7, 0.1])
    assert math.isclose(p.sum(), 1.0)
    with pytest.raises(ValueError):
        flip_distribution(0, 0.9, 4)  # above (N-1)/N
    with pytest.raises(ValueError):
        flip_distribution(4, 0.1, 4)


@settings(max_examples=200)
@given(st.integers(2, 50), st.floats(0, 1), st.floats(0, 1))
def test_entropy_strictly_increasing(n, a, b):
    a, b = sorted((a * max_alpha(n), b * max_alpha(n)))
    if b - a > 1e-9:
        assert entropy_of_alpha(a, n) < entropy_of_alpha(b, n)


@settings(max_examples=200)
@given(st.integers(2, 50), st.floats(0, 1))
def test_inversion_roundtrip(n, u):
    a = invert_entropy(u, n)
    assert 0.0 <= a <= max_alpha(n)
    assert abs(entropy_of_alpha(a, n) - u) <= 1e-10


def test_inversion_agrees_with_brentq():
    for u in (0.05, 0.3, 0.5, 0.77, 0.999):
        assert abs(invert_entropy(u, 10) - scipy_alpha(u, 10)) < 1e-8


def test_inversion_is_vectorized_and_validates():
    u = np.linspace(0, 1, 11)
    a = invert_entropy(u, 5)
    assert a.shape == (11,) and np.all(np.diff(a) > 0)
    with pytest.raises(ValueError):
        invert_entropy(1.2, 5)
    with pytest.raises(ValueError):
        invert_entropy(0.5, 5, tol=0)


def test_target_entropy_cdf_knots_and_validation():
    assert target_entropy_cdf(0.0, 0.2, 0.6) == 0.0
    assert math.isclose(target_entropy_cdf(0.6, 0.2, 0.6), 0.2)
    assert target_entropy_cdf(1.0, 0.2, 0.6) == 1.0
    assert target_entropy_cdf(0.3, 0.2, 0.6) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        target_entropy_cdf(0.5, 0.5, 1.0)
    with pytest.raises(ValueError):
        target_entropy_cdf(1.5, 0.5, 0.5)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0, 1), st.floats(0, 1))
def test_target_entropy_cdf_monotone_in_unit_square(beta, kappa, s, t):
    lo, hi = sorted((s, t))
    a, b = target_entropy_cdf(lo, beta, kappa), target_entropy_cdf(hi, beta, kappa)
    assert 0.0 <= a <= b <= 1.0 + 1e-15


def test_config_validation():
    for bad in ({"n_classes": 1}, {"beta": 0.0}, {"beta": 1.0}, {"kappa": 0.0}, {"kappa": 1.0}):
        with pytest.raises(ValueError):
            NoiseSimConfig(**bad)


def test_flip_rate_matches_quadrature_oracle():
    cfg = NoiseSimConfig(10, 0.5, 0.5, seed=3)
    labels = np.random.default_rng(0).integers(0, 10, 100_000)
    rec = corrupt_labels(labels, cfg)
    oracle, _ = integrate.quad(lambda t: scipy_alpha(target_entropy_cdf(t, 0.5, 0.5), 10), 0, 1, points=[0.5], limit=200)
    assert abs(rec.flip_rate - oracle) < 0.01


@pytest.mark.parametrize("beta,kappa", [(0.2, 0.5), (0.5, 0.5), (0.8, 0.3)])
def test_coherence_distribution_ks(beta, kappa):
    rec = corrupt_labels(np.zeros(100_000, dtype=int), NoiseSimConfig(10, beta, kappa, seed=1))
    ks = stats.kstest(rec.coherence, lambda x: c_cdf(x, beta, kappa)).statistic
    assert ks < 0.01


def test_flipped_labels_are_uniform_over_other_classes():
    rec = corrupt_labels(np.full(60_000, 3), NoiseSimConfig(6, 0.8, 0.5, seed=2))
    moved = rec.noisy_label[rec.noisy_label != 3]
    counts = np.bincount(moved, minlength=6)
    assert counts[3] == 0
    others = np.delete(counts, 3)
    assert stats.chisquare(others).pvalue > 1e-3


def test_corruption_is_seeded():
    labels = np.arange(1000) % 7
    a = corrupt_labels(labels, NoiseSimConfig(7, 0.5, 0.5, seed=4))
    b = corrupt_labels(labels, NoiseSimConfig(7, 0.5, 0.5, seed=4))
    c = corrupt_labels(labels, NoiseSimConfig(7, 0.5, 0.5, seed=5))
    np.testing.assert_array_equal(a.noisy_label, b.noisy_label)
    np.testing.assert_array_equal(a.u, b.u)
    assert not np.array_equal(a.u, c.u)


def test_corruption_handles_empty_and_range_errors():
    rec = corrupt_labels(np.zeros(0, dtype=int), NoiseSimConfig(4))
    assert len(rec.u) == 0 and rec.flip_rate == 0.0
    with pytest.raises(ValueError):
        corrupt_labels(np.array([0, 4]), NoiseSimConfig(4))


def test_corrupt_dataset_keeps_points():
    data = AnnotatedSamples(np.arange(20.0).reshape(10, 2), np.arange(10) % 3)
    noisy, rec = corrupt_dataset(data, NoiseSimConfig(3, seed=0))
    np.testing.assert_array_equal(noisy.x, data.x)
    np.testing.assert_array_equal(noisy.c, rec.coherence)


# binning and regimes -------------------------------------------------------------


def test_bins_have_equal_population_and_follow_rank():
    scores = np.random.default_rng(0).random(800)
    b = bin_coherence(scores, 8)
    assert np.all(np.bincount(b.bins, minlength=8) == 100)
    order = np.argsort(scores)
    assert np.all(np.diff(b.bins[order]) >= 0)
    assert b.coherence.min() == 0.0 and b.coherence.max() == 1.0
    assert not b.has_ties


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.integers(2, 12))
def test_bins_monotone_in_score(scores, n_bins):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = bin_coherence(scores, n_bins)
    s = np.asarray(scores)
    assert b.bins.min() >= 0 and b.bins.max() < n_bins
    i, j = np.meshgrid(np.arange(len(s)), np.arange(len(s)))
    strictly = s[i] < s[j]
    assert np.all(b.bins[i][strictly] <= b.bins[j][strictly])


def test_ties_are_reported():
    with pytest.warns(UserWarning):
        b = bin_coherence(np.full(16, 0.5), 4)
    assert b.has_ties
    np.testing.assert_array_equal(np.bincount(b.bins), [4, 4, 4, 4])
    with pytest.raises(ValueError):
        bin_coherence([], 4)


def test_filter_threshold_drops_bottom_three_of_eight():
    assert filter_threshold(8) == 3
    assert filter_threshold(16) == 6


def test_strategies():
    rng = np.random.default_rng(1)
    data = AnnotatedSamples(rng.normal(size=(80, 2)), rng.integers(0, 4, 80))
    b = bin_coherence(rng.random(80), 8)
    base = apply_strategy(data, b, "baseline")
    assert len(base) == 80 and base.samples.c is None and base.samples.weight is None
    filt = apply_strategy(data, b, "filtered")
    assert len(filt) == 50 and filt.source_size == 80
    assert filt.metadata["removed_bins"] == [0, 1, 2]
    w = apply_strategy(data, b, "weighted")
    np.testing.assert_array_equal(w.samples.weight, b.coherence)
    cad = apply_strategy(data, b, "cad")
    np.testing.assert_array_equal(cad.samples.c, b.coherence)
    with pytest.raises(ValueError):
        apply_strategy(data, b, "bogus")

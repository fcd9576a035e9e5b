import numpy as np
import pytest

from condist.errors import InvalidArgument
from condist.ot import cdf_w1
from condist.rng import substream
from condist.synthetic import (IntroUniform, Model1, Model2, Model3,
                               frozen_model3_params, kernel_by_name,
                               projected_cdf_3d, sample_dataset, true_cdf_1d)


def test_sample_shapes_model1():
    data = sample_dataset(Model1(), 10_000, 4)
    assert data.xs.shape == (10_000, 1) and data.ys.shape == (10_000, 1)


def test_sampling_deterministic_model3():
    a = sample_dataset(Model3(), 10, 5)
    b = sample_dataset(Model3(), 10, 5)
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.ys, b.ys)


def test_intro_uniform_support():
    data = sample_dataset(IntroUniform(), 100_000, 6)
    x, y = data.xs[:, 0], data.ys[:, 0]
    assert np.all(y >= x) and np.all(y <= x + 0.5)


def test_model2_support_respects_threshold():
    data = sample_dataset(Model2(threshold=0.5), 50_000, 7)
    x, y = data.xs[:, 0], data.ys[:, 0]
    left = x < 0.5
    assert np.all(y[left] >= 0.5) and np.all(y[left] <= 1.0)
    assert np.all(y[~left] >= 0.0) and np.all(y[~left] <= 0.5)


def test_model3_feature_law_is_centered_box():
    data = sample_dataset(Model3(), 20_000, 8)
    assert data.xs.min() >= -0.5 and data.xs.max() <= 0.5
    assert abs(data.xs.mean()) < 0.02


# ---------------------------------------------------------------------------
# 1-d conditional CDFs


def test_model1_symmetric_mixture_at_zero():
    assert abs(true_cdf_1d(Model1(), 0.5, 0.0) - 0.5) < 1e-12


def test_model2_literal_threshold_midpoint():
    assert abs(true_cdf_1d(Model2(), 0.3, 0.75) - 0.5) < 1e-12


def test_model1_cdf_against_monte_carlo():
    kern = Model1()
    rng = substream(123)
    x, t = 0.25, 0.6
    mu, sig = kern.mu(x), kern.sigma(x)
    xi = 2.0 * rng.integers(0, 2, size=10_000_000) - 1.0
    y = xi * (mu + sig * rng.standard_normal(10_000_000))
    assert abs(true_cdf_1d(kern, x, t) - (y <= t).mean()) < 3e-4


def test_model1_degenerate_sigma_is_step_mixture():
    kern = Model1()
    # sigma(0) = 0, mu(0) = 0.7: half-mass steps at -0.7 and 0.7
    vals = true_cdf_1d(kern, 0.0, np.array([-0.8, -0.7, 0.0, 0.7, 0.8]))
    np.testing.assert_allclose(vals, [0.0, 0.5, 0.5, 1.0, 1.0])


def test_true_cdf_rejects_model3():
    with pytest.raises(InvalidArgument):
        true_cdf_1d(Model3(), 0.0, 0.0)


@pytest.mark.parametrize("kernel", [IntroUniform(), Model1(), Model2(), Model2(0.5)])
def test_cdf_monotone_and_normalized(kernel):
    lo, hi = kernel.target_bounds()
    ts = np.linspace(lo - 0.5, hi + 0.5, 301)
    for x in np.linspace(0.0, 1.0, 7):
        vals = true_cdf_1d(kernel, x, ts)
        assert np.all(np.diff(vals) >= -1e-12)
        # Gaussian-tailed kernels only reach 0/1 asymptotically
        assert vals[0] <= 1e-6 and vals[-1] >= 1.0 - 1e-6


def test_conditional_window_ecdf_matches_truth():
    # 1e6 draws with X conditioned to a width-1e-3 window; the kernel drifts
    # by at most the window width (Lipschitz constant 1).
    kern = IntroUniform()
    rng = substream(55)
    x0 = 0.437
    x = rng.uniform(x0 - 5e-4, x0 + 5e-4, size=1_000_000)
    y = x + 0.5 * rng.uniform(size=1_000_000)
    probes = np.linspace(x0 + 0.01, x0 + 0.49, 20)
    truth = true_cdf_1d(kern, x0, probes)
    ecdf = np.array([(y <= p).mean() for p in probes])
    assert np.abs(truth - ecdf).max() < 0.01


def test_intro_uniform_w_is_exactly_shift():
    kern = IntroUniform()
    # kinks of both CDFs land on the grid so the trapezoid rule is exact
    pairs = [(0.2, 0.35), (0.1, 0.6), (0.0, 0.5)]
    for xa, xb in pairs:
        w = cdf_w1(lambda t: true_cdf_1d(kern, xa, t),
                   lambda t: true_cdf_1d(kern, xb, t), 0.0, 1.5, 3001)
        assert abs(w - abs(xa - xb)) < 1e-12


# ---------------------------------------------------------------------------
# model3 frozen parameters and projections


def test_frozen_params_reproducible():
    a1, ap1, v1, vp1 = frozen_model3_params(99)
    a2, ap2, v2, vp2 = frozen_model3_params(99)
    for x, y in ((a1, a2), (ap1, ap2), (v1, v2), (vp1, vp2)):
        np.testing.assert_array_equal(x, y)


def test_frozen_params_differ_across_seeds():
    a1, *_ = frozen_model3_params(1)
    a2, *_ = frozen_model3_params(2)
    assert np.any(a1 != a2)


def test_frozen_params_normality_sanity():
    entries = np.array([frozen_model3_params(s)[0][0, 0] for s in range(10_000)])
    assert abs(entries.mean()) < 0.1
    assert abs(np.abs(entries).mean() - np.sqrt(2.0 / np.pi)) < 0.1


def test_projected_cdf_at_origin_mean():
    kern = Model3()
    # x = 0: S_0 = 0, Ax = 0, so both component means are a.cos(0) = 1
    assert abs(projected_cdf_3d(kern, np.zeros(3), np.array([1.0, 0.0, 0.0]), 1.0)
               - 0.5) < 1e-12


def test_projected_cdf_monotone():
    kern = Model3()
    rng = substream(31)
    x = rng.uniform(-0.5, 0.5, size=3)
    vec = rng.standard_normal(3)
    vec /= np.abs(vec).sum()
    ts = np.linspace(-3.0, 3.0, 101)
    vals = projected_cdf_3d(kern, x, vec, ts)
    assert np.all(np.diff(vals) >= -1e-12)


def test_projected_cdf_rejects_unnormalized_vector():
    with pytest.raises(InvalidArgument):
        projected_cdf_3d(Model3(), np.zeros(3), np.array([1.0, 1.0, 0.0]), 0.0)


def test_projected_cdf_against_monte_carlo():
    kern = Model3()
    rng = substream(77)
    x = rng.uniform(-0.5, 0.5, size=3)
    vec = rng.standard_normal(3)
    vec /= np.abs(vec).sum()
    t = float(vec @ np.cos(kern.a @ x)) + 0.2
    n, chunk = 10_000_000, 1_000_000
    hits = 0
    for _ in range(n // chunk):
        zeta = rng.integers(0, 2, size=chunk).astype(float)[:, None]
        w = rng.standard_normal((chunk, 3))
        w_prime = rng.standard_normal((chunk, 3))
        y1 = np.cos(kern.a @ x) + 0.1 * (w @ np.cos(kern.v @ x).T)
        y2 = np.cos(kern.a_prime @ x) + 0.1 * (w_prime @ np.cos(kern.v_prime @ x).T)
        proj = (zeta * y1 + (1.0 - zeta) * y2) @ vec
        hits += int((proj <= t).sum())
    assert abs(projected_cdf_3d(kern, x, vec, t) - hits / n) < 3e-4


def test_kernel_by_name():
    assert kernel_by_name("model2", model2_threshold=0.5).threshold == 0.5
    assert kernel_by_name("intro-uniform").name == "intro_uniform"
    with pytest.raises(InvalidArgument):
        kernel_by_name("nope")

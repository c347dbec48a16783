import math

import numpy as np
import pytest
from scipy.stats import norm

from gradcheck import rel_error
from ntc.density import (
    EPSILON,
    DiscretePMF,
    MarginalDensity,
    adapt_range,
    differential_entropy,
    discretize,
    eval_density,
    fit_density,
    fit_step,
    log2_likelihood_and_grads,
    pmf_entropy,
    renormalize,
    sample_gradient,
    uniform_density,
)
from ntc.errors import ParameterError


def random_density(rng, n=41, left=-2.0):
    return renormalize(MarginalDensity(left, rng.uniform(0.1, 1.0, n)))


def linear_binning(values, grid, spacing):
    """Brute-force triangular-kernel histogram, normalized to a density."""
    d = np.abs(values[:, None] - grid[None, :]) / spacing
    return np.maximum(0.0, 1.0 - d).sum(axis=0) / (values.size * spacing)


def relaxed_gaussian(t, sigma):
    return norm.cdf((t + 0.5) / sigma) - norm.cdf((t - 0.5) / sigma)


class TestEval:
    def test_grid_point(self):
        psi = MarginalDensity(-1.0, [0.2, 0.5, 0.3, 0.7])
        assert eval_density(psi, -0.9) == pytest.approx(0.5, abs=1e-15)
        assert eval_density(psi, -1.0) == 0.2
        assert eval_density(psi, psi.right) == pytest.approx(0.7, abs=1e-15)

    def test_midpoint(self):
        psi = MarginalDensity(0.0, [0.2, 0.6])
        assert eval_density(psi, 0.05) == pytest.approx(0.4, abs=1e-15)

    def test_outside(self):
        psi = MarginalDensity(0.0, [0.2, 0.6])
        np.testing.assert_array_equal(eval_density(psi, [-0.01, 0.11, 50.0]), EPSILON)

    def test_zero_sample_floored(self):
        psi = MarginalDensity(0.0, [0.0, 0.0, 1.0])
        assert eval_density(psi, 0.05) == EPSILON


class TestLikelihood:
    def test_uniform(self):
        psi = uniform_density(-5.0, 5.0)
        lik = log2_likelihood_and_grads(psi, np.array([0.33, -4.2]))
        np.testing.assert_allclose(lik.value, math.log2(0.1), rtol=1e-12)
        assert lik.value[0] == pytest.approx(-3.3219, abs=1e-4)
        np.testing.assert_array_equal(lik.d_t, 0.0)

    def test_flat_segment(self):
        psi = MarginalDensity(0.0, [0.5, 0.5, 2.0])
        assert log2_likelihood_and_grads(psi, 0.04).d_t == 0.0

    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            psi = random_density(rng)
            # stay away from the kinks at grid nodes
            t = psi.left + psi.spacing * (rng.integers(0, psi.samples.size - 1) + rng.uniform(0.1, 0.9))
            lik = log2_likelihood_and_grads(psi, t)
            h = 1e-6
            num_t = (np.log2(eval_density(psi, t + h)) - np.log2(eval_density(psi, t - h))) / (2 * h)
            assert rel_error(lik.d_t, num_t) < 1e-6
            dense = sample_gradient(psi, lik.index, lik.d_lo, lik.d_hi)
            num = np.zeros_like(psi.samples)
            for k in range(psi.samples.size):
                s = psi.samples.copy()
                s[k] += h
                up = np.log2(eval_density(MarginalDensity(psi.left, s), t))
                s[k] -= 2 * h
                down = np.log2(eval_density(MarginalDensity(psi.left, s), t))
                num[k] = (up - down) / (2 * h)
            assert rel_error(dense, num) < 1e-6
            assert np.count_nonzero(dense) <= 2


class TestFitStep:
    def test_empty_batch(self):
        psi = random_density(np.random.default_rng(1))
        out = fit_step(psi, [], 0.5)
        np.testing.assert_allclose(out.samples, psi.samples, rtol=1e-14)

    def test_integral_after_step(self):
        rng = np.random.default_rng(2)
        psi = random_density(rng)
        for step in (1e-3, 0.5, 30.0):
            out = fit_step(psi, rng.normal(size=100), step)
            assert out.integral() == pytest.approx(1.0, abs=1e-9)
            assert np.all(out.samples >= 0)

    def test_rejects_bad_step(self):
        with pytest.raises(ParameterError):
            fit_step(uniform_density(-1, 1), [0.0], 0.0)

    def test_averaging_schedule_equals_histogram(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(-0.5, 0.5, 20000)
        psi = fit_density(values, batch_size=1000)
        oracle = linear_binning(values, psi.grid, psi.spacing)
        np.testing.assert_allclose(psi.samples, oracle, atol=1e-10)

    def test_uniform_noise_concentrates_on_zero(self):
        rng = np.random.default_rng(4)
        values = rng.uniform(-0.5, 0.5, 50000)
        psi = uniform_density(-3.0, 3.0)
        for batch in values.reshape(-1, 500):
            psi = fit_step(psi, batch, 1.0)
        pmf = discretize(psi)
        assert pmf.prob(0) >= 0.99
        outside = (psi.grid < -0.65) | (psi.grid > 0.65)
        assert psi.samples[outside].max() < 1e-3

    def test_log_likelihood_objective(self):
        rng = np.random.default_rng(5)
        psi = uniform_density(-4.0, 4.0)
        for _ in range(300):
            psi = fit_step(psi, rng.normal(size=512), 0.05, objective="log-likelihood")
        assert psi.integral() == pytest.approx(1.0, abs=1e-9)
        assert eval_density(psi, 0.0) > eval_density(psi, 2.5)

    def test_consistency_l1(self):
        # y ~ N(0, 1.5^2) plus unit-width uniform noise: the relaxed density is known in closed form
        rng = np.random.default_rng(6)
        sigma = 1.5
        values = rng.normal(scale=sigma, size=200_000) + rng.uniform(-0.5, 0.5, 200_000)
        psi = fit_density(values)
        truth = relaxed_gaussian(psi.grid, sigma)
        assert np.sum(np.abs(psi.samples - truth)) * psi.spacing < 0.05


class TestAdaptRange:
    def test_widen_preserves_nodes(self):
        rng = np.random.default_rng(7)
        # zero end samples: the old boundary nodes become interior without changing the integral
        psi = renormalize(MarginalDensity(-1.0, np.r_[0.0, rng.uniform(0.1, 1.0, 19), 0.0]))
        wide = adapt_range(psi, -5.0, 6.0)
        assert wide.left <= -6.0 + 1e-9 and wide.right >= 7.0 - 1e-9
        offset = int(round((psi.left - wide.left) / psi.spacing))
        np.testing.assert_allclose(wide.samples[offset : offset + 21], psi.samples, rtol=1e-12, atol=0)
        assert wide.integral() == pytest.approx(1.0, abs=1e-12)

    def test_identical_range(self):
        psi = renormalize(MarginalDensity(-3.0, np.r_[0.0, np.ones(59), 0.0]))
        same = adapt_range(psi, -2.0, 2.0)
        assert same.left == pytest.approx(psi.left) and same.samples.size == psi.samples.size
        np.testing.assert_allclose(same.samples, psi.samples, rtol=1e-12)

    def test_shrink_does_not_clip_mass(self):
        rng = np.random.default_rng(8)
        values = rng.normal(size=40000) + rng.uniform(-0.5, 0.5, 40000)
        psi = uniform_density(-20.0, 20.0)
        for batch in values.reshape(-1, 100):
            psi = fit_step(psi, batch, 1.0)
        shrunk = adapt_range(psi, values.min(), values.max())
        assert shrunk.samples.size < psi.samples.size
        kept = (psi.grid >= shrunk.left - 1e-9) & (psi.grid <= shrunk.right + 1e-9)
        clipped = psi.spacing * psi.samples[~kept].sum()
        assert clipped < 1e-6


class TestDiscretize:
    def test_uniform_eleven(self):
        psi = renormalize(MarginalDensity(-5.05, np.full(102, 1.0)))
        pmf = discretize(psi)
        assert (pmf.q_min, pmf.q_max) == (-5, 5)
        np.testing.assert_allclose(pmf.probs, 1 / 11, rtol=1e-12)
        assert pmf_entropy(pmf) == pytest.approx(math.log2(11), rel=1e-12)

    def test_triangle_mode(self):
        grid = np.arange(-30, 31) * 0.1
        psi = renormalize(MarginalDensity(-3.0, np.maximum(0, 3 - np.abs(grid))))
        assert discretize(psi).mode == 0

    def test_tie_breaks_towards_zero(self):
        assert DiscretePMF(-1, [0.4, 0.4, 0.2]).mode == 0
        assert DiscretePMF(-1, [1 / 3, 1 / 3, 1 / 3]).mode == 0
        assert DiscretePMF(-1, [0.4, 0.2, 0.4]).mode == -1
        assert DiscretePMF(2, [0.5, 0.5]).mode == 2

    def test_eq9_identity(self):
        psi = random_density(np.random.default_rng(9), n=81, left=-4.0)
        pmf = discretize(psi)
        n = np.arange(pmf.q_min, pmf.q_max + 1)
        ratio = pmf.probs / eval_density(psi, n.astype(float))
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)

    def test_floor_and_sum(self):
        psi = renormalize(MarginalDensity(-3.0, np.r_[np.zeros(25), np.ones(11), np.zeros(25)]))
        pmf = discretize(psi)
        assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert pmf.probs.min() >= EPSILON

    def test_no_integer(self):
        with pytest.raises(ParameterError):
            discretize(MarginalDensity(0.2, [1.0, 1.0, 1.0]))

    def test_gaussian_bin_masses(self):
        # a fitted relaxed density sampled at integers reproduces Monte-Carlo bin masses
        rng = np.random.default_rng(10)
        sigma = 1.2
        fit_n = 16_000_000
        psi = fit_density(rng.normal(scale=sigma, size=fit_n) + rng.uniform(-0.5, 0.5, fit_n), batch_size=1 << 18)
        pmf = discretize(psi)
        mc_y = rng.normal(scale=sigma, size=1_000_000)
        for n in range(-3, 4):
            p_mc = np.mean(np.abs(mc_y - n) <= 0.5)
            se = math.sqrt(p_mc * (1 - p_mc) / mc_y.size)
            assert abs(pmf.prob(n) - p_mc) < 3 * se


class TestEntropy:
    def test_uniform_eight(self):
        assert pmf_entropy(DiscretePMF(0, np.full(8, 1 / 8))) == pytest.approx(3.0, abs=1e-14)

    def test_point_mass(self):
        assert pmf_entropy(DiscretePMF(3, [1.0])) == 0.0

    def test_differential_entropy_quadrature(self):
        psi = random_density(np.random.default_rng(11), n=31)
        t = np.linspace(psi.left, psi.right, 300_001)
        p = eval_density(psi, t)
        f = -p * np.log2(p)
        quad = np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(t))
        assert differential_entropy(psi) == pytest.approx(quad, abs=1e-7)

    def test_differential_entropy_uniform(self):
        psi = renormalize(MarginalDensity(0.0, np.ones(41)))
        assert differential_entropy(psi) == pytest.approx(2.0, abs=1e-12)

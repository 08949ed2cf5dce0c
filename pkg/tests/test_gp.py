"""GP numerics against independent dense-conditioning and high-precision
oracles."""

import math

import mpmath
import numpy as np
import pytest

from motionmix import (
    ConditioningError,
    FieldPosterior,
    KernelParams,
    RegionOfInterest,
    gaussian_log_density,
    gp_posterior,
    kernel_matrix,
    mean_velocity_field,
    sq_exp_kernel,
)


def dense_conditioning_oracle(
    train_pts, train_vals, test_pts, sigma_sq, w_x, w_y, noise_sq, prior_mean
):
    """Condition the explicit joint Gaussian over (test, train) blocks.

    Builds the full covariance of the stacked vector and applies the
    textbook partitioned-Gaussian formulas with a dense solve; the code
    under test must agree with this to high precision.
    """

    def k(pa, pb):
        pa = np.atleast_2d(pa)
        pb = np.atleast_2d(pb)
        out = np.empty((pa.shape[0], pb.shape[0]))
        for i, p in enumerate(pa):
            for j, q in enumerate(pb):
                out[i, j] = sigma_sq * math.exp(
                    -((p[0] - q[0]) ** 2) / (2 * w_x**2)
                    - ((p[1] - q[1]) ** 2) / (2 * w_y**2)
                )
        return out

    k_tt = k(test_pts, test_pts)
    k_tr = k(test_pts, train_pts)
    k_rr = k(train_pts, train_pts) + noise_sq * np.eye(len(train_pts))
    solve = np.linalg.solve(k_rr, np.column_stack([train_vals - prior_mean, k_tr.T]))
    mean = prior_mean + k_tr @ solve[:, 0]
    cov = k_tt - k_tr @ solve[:, 1:]
    return mean, cov


class TestSqExpKernel:
    def test_zero_distance_returns_variance(self):
        assert sq_exp_kernel((3.0, 4.0), (3.0, 4.0), 2.5, 1.0, 1.0) == pytest.approx(2.5)

    def test_unit_offset(self):
        got = sq_exp_kernel((0.0, 0.0), (1.0, 0.0), 1.0, 1.0, 1.0)
        assert got == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_anisotropic_offset(self):
        got = sq_exp_kernel((0.0, 0.0), (2.0, 1.0), 1.0, 2.0, 1.0)
        assert got == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            p = rng.uniform(-50, 50, 2)
            q = rng.uniform(-50, 50, 2)
            s, wx, wy = rng.uniform(0.1, 10.0, 3)
            a = sq_exp_kernel(p, q, s, wx, wy)
            b = sq_exp_kernel(q, p, s, wx, wy)
            assert a == pytest.approx(b, rel=1e-14)
            assert 0.0 < a <= s + 1e-15

    def test_rejects_bad_params(self):
        with pytest.raises(ValueError):
            sq_exp_kernel((0, 0), (1, 1), -1.0, 1.0, 1.0)


class TestKernelMatrix:
    def test_single_point_with_noise(self):
        got = kernel_matrix(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]), 1.0, 1.0, 1.0, noise_sq=1.0)
        np.testing.assert_allclose(got, [[2.0]])

    def test_duplicate_points_rank_one_without_noise(self):
        pts = np.array([[3.0, 3.0], [3.0, 3.0]])
        got = kernel_matrix(pts, pts, 1.7, 2.0, 2.0)
        np.testing.assert_allclose(got, 1.7 * np.ones((2, 2)))

    def test_transpose_of_swapped_arguments(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 10, (3, 2))
        b = rng.uniform(0, 10, (5, 2))
        k_ab = kernel_matrix(a, b, 2.0, 1.5, 0.5)
        k_ba = kernel_matrix(b, a, 2.0, 1.5, 0.5)
        np.testing.assert_allclose(k_ab, k_ba.T, rtol=1e-15)

    def test_noisy_matrices_stay_near_psd(self):
        rng = np.random.default_rng(5)
        for n in (10, 60, 200):
            pts = rng.uniform(0, 100, (n, 2))
            k = kernel_matrix(pts, pts, 4.0, 8.0, 8.0, noise_sq=1.0)
            assert np.linalg.eigvalsh(k).min() >= -1e-9

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            kernel_matrix(np.empty((0, 2)), np.array([[0.0, 0.0]]), 1.0, 1.0, 1.0)


class TestGpPosterior:
    def test_noiseless_interpolation_at_training_point(self):
        mean, cov = gp_posterior(
            np.array([[0.0, 0.0]]),
            np.array([1.0]),
            np.array([[0.0, 0.0]]),
            sigma_sq=1.0,
            w_x=1.0,
            w_y=1.0,
            noise_sq=0.0,
            prior_mean=0.0,
        )
        assert mean[0] == pytest.approx(1.0, abs=1e-6)
        assert cov[0, 0] == pytest.approx(0.0, abs=1e-6)

    def test_single_point_closed_form(self):
        # conditioning on one noiseless point: mean = k* / k(0) * v
        mean, _ = gp_posterior(
            np.array([[0.0, 0.0]]),
            np.array([1.0]),
            np.array([[1.0, 0.0]]),
            sigma_sq=1.0,
            w_x=1.0,
            w_y=1.0,
            noise_sq=0.0,
            prior_mean=0.0,
        )
        assert mean[0] == pytest.approx(math.exp(-0.5), abs=1e-7)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n, m = rng.integers(2, 50), rng.integers(1, 20)
            train = rng.uniform(0, 50, (n, 2))
            vals = rng.normal(0, 3, n)
            test = rng.uniform(0, 50, (m, 2))
            sigma_sq = rng.uniform(0.5, 5.0)
            wx, wy = rng.uniform(1.0, 20.0, 2)
            noise = rng.uniform(0.1, 2.0)
            mu = rng.normal(0, 2)
            mean, cov = gp_posterior(train, vals, test, sigma_sq, wx, wy, noise, mu)
            mean_o, cov_o = dense_conditioning_oracle(
                train, vals, test, sigma_sq, wx, wy, noise, mu
            )
            scale = max(1.0, np.abs(mean_o).max())
            assert np.abs(mean - mean_o).max() / scale < 1e-8
            assert np.abs(cov - cov_o).max() / max(1.0, np.abs(cov_o).max()) < 1e-8

    def test_posterior_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(3)
        train = rng.uniform(0, 20, (30, 2))
        vals = rng.normal(0, 1, 30)
        test = rng.uniform(-10, 30, (40, 2))
        sigma_sq = 2.5
        _, cov = gp_posterior(train, vals, test, sigma_sq, 4.0, 4.0, 1.0, 0.0)
        assert np.diag(cov).max() <= sigma_sq + 1e-9


class TestGaussianLogDensity:
    def test_standard_normal_1d(self):
        got = gaussian_log_density(np.array([0.0]), np.array([0.0]), np.array([[1.0]]))
        assert got == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_identity_2d_at_mean(self):
        got = gaussian_log_density(np.zeros(2), np.zeros(2), np.eye(2))
        assert got == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_matches_high_precision_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            a = rng.normal(0, 1, (3, 3))
            cov = a @ a.T + 0.5 * np.eye(3)
            v = rng.normal(0, 1, 3)
            mean = rng.normal(0, 1, 3)
            got = gaussian_log_density(v, mean, cov)
            with mpmath.workdps(50):
                m = mpmath.matrix(cov.tolist())
                resid = mpmath.matrix((v - mean).tolist())
                sol = mpmath.lu_solve(m, resid)
                quad = sum(resid[i] * sol[i] for i in range(3))
                logdet = mpmath.log(mpmath.det(m))
                want = -mpmath.mpf(0.5) * (
                    quad + logdet + 3 * mpmath.log(2 * mpmath.pi)
                )
            assert got == pytest.approx(float(want), rel=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_log_density(np.zeros(2), np.zeros(3), np.eye(3))


def make_params(sigma=1.0, w=5.0, noise=1e-8):
    return KernelParams(
        sigma_sq_x=sigma, sigma_sq_y=sigma, w_x=w, w_y=w, sigma_n_sq=noise
    )


class TestFieldPosterior:
    def test_constant_data_interpolation(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 10, (12, 2))
        vel = np.tile([10.0, 0.0], (12, 1))
        post = FieldPosterior(pts, vel, make_params(), prior_mean=(10.0, 0.0))
        got = post.mean(pts)
        np.testing.assert_allclose(got, vel, atol=1e-6)

    def test_far_field_reverts_to_prior(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
        vel = np.array([[9.0, -2.0], [11.0, 2.0]])
        post = FieldPosterior(pts, vel, make_params(sigma=2.0, w=2.0), (5.0, 1.0))
        mean, var = post.mean_and_var(np.array([[500.0, 500.0]]))
        np.testing.assert_allclose(mean[0], [5.0, 1.0], atol=1e-10)
        np.testing.assert_allclose(var[0], [2.0, 2.0], atol=1e-10)

    def test_sinusoidal_field_matches_oracle(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 30, (50, 2))
        vel = np.column_stack(
            [np.sin(pts[:, 0] / 5.0) * 4.0, np.cos(pts[:, 1] / 5.0) * 4.0]
        )
        params = KernelParams(
            sigma_sq_x=3.0, sigma_sq_y=2.0, w_x=6.0, w_y=7.0, sigma_n_sq=0.5
        )
        post = FieldPosterior(pts, vel, params, (0.5, -0.5))
        test = rng.uniform(0, 30, (15, 2))
        means, variances = post.mean_and_var(test)
        for axis, sigma_sq in ((0, 3.0), (1, 2.0)):
            mean_o, cov_o = dense_conditioning_oracle(
                pts, vel[:, axis], test, sigma_sq, 6.0, 7.0, 0.5,
                0.5 if axis == 0 else -0.5,
            )
            np.testing.assert_allclose(means[:, axis], mean_o, rtol=0, atol=1e-8)
            np.testing.assert_allclose(
                variances[:, axis], np.diag(cov_o), rtol=0, atol=1e-8
            )

    def test_loo_matches_explicit_exclusion(self):
        """Precision-matrix leave-one-out equals refitting without the rows."""
        rng = np.random.default_rng(21)
        pts = rng.uniform(0, 20, (12, 2))
        vel = rng.normal(0, 2, (12, 2))
        params = KernelParams(
            sigma_sq_x=2.0, sigma_sq_y=1.5, w_x=5.0, w_y=4.0, sigma_n_sq=0.8
        )
        post = FieldPosterior(pts, vel, params, (0.3, -0.2))
        held = slice(3, 6)
        rest = np.r_[0:3, 6:12]
        refit = FieldPosterior(pts[rest], vel[rest], params, (0.3, -0.2))
        want = refit.log_density(pts[held], vel[held])
        got = post.loo_log_density(held)
        assert got == pytest.approx(want, rel=1e-10)

    def test_empty_training_set_gives_prior(self):
        params = make_params(sigma=2.0, w=3.0, noise=0.5)
        post = FieldPosterior(np.empty((0, 2)), np.empty((0, 2)), params, (1.0, 2.0))
        pts = np.array([[0.0, 0.0], [1.0, 0.0]])
        vel = np.array([[1.5, 2.5], [0.5, 1.5]])
        assert post.log_density(pts, vel) == pytest.approx(
            post.prior_log_density(pts, vel)
        )


class TestMeanVelocityField:
    def test_constant_pattern_field(self, unit_roi):
        rng = np.random.default_rng(2)
        pts = rng.uniform(20, 80, (20, 2))
        vel = np.tile([10.0, 0.0], (20, 1))
        post = FieldPosterior(pts, vel, make_params(w=50.0), (10.0, 0.0))
        fld = mean_velocity_field(post, unit_roi, 5, 4)
        np.testing.assert_allclose(fld.mean_x, 10.0, atol=1e-6)
        np.testing.assert_allclose(fld.mean_y, 0.0, atol=1e-6)
        assert fld.grid_points.shape == (20, 2)

    def test_grid_points_inside_roi(self, unit_roi):
        pts = np.array([[50.0, 50.0]])
        vel = np.array([[1.0, 1.0]])
        post = FieldPosterior(pts, vel, make_params(), (0.0, 0.0))
        fld = mean_velocity_field(post, unit_roi, 7, 3)
        for x, y in fld.grid_points:
            assert unit_roi.contains(x, y)


class TestConditioningErrors:
    def test_error_carries_jitter_levels(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
        with pytest.raises(ConditioningError) as err:
            gaussian_log_density(np.zeros(2), np.zeros(2), bad)
        assert len(err.value.attempted_jitters) >= 2

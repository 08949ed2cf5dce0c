"""Gaussian-process numerics for velocity fields.

The two velocity axes are modelled by independent GPs that share the
spatial correlation structure: for axis ``eta`` the covariance between
two positions is ``sigma_sq_eta * exp(-dx^2/(2 w_x^2) - dy^2/(2 w_y^2))``
plus observation noise ``sigma_n_sq`` at coinciding points.

Conventions used throughout the package:

* conditioning (posterior mean / covariance of the latent field) puts the
  noise on the training block only, so predicted covariances describe the
  noise-free field;
* log-densities of *observed* velocity vectors include the noise term on
  their own block, because observations carry it.

All factorizations are Cholesky-based with escalating diagonal jitter;
an explicit matrix inverse is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .model import KernelParams, RegionOfInterest

__all__ = [
    "ConditioningError",
    "sq_exp_kernel",
    "kernel_matrix",
    "chol_with_jitter",
    "gp_posterior",
    "gp_marginal_log_likelihood",
    "gaussian_log_density",
    "FieldPosterior",
    "VectorField",
    "mean_velocity_field",
]

_LOG_2PI = float(np.log(2.0 * np.pi))

# Escalation schedule for stabilizing near-singular kernel matrices:
# first retry adds 1e-10 * scale to the diagonal, then ten-fold steps.
_JITTER_BASE = 1e-10
_JITTER_RETRIES = 5

# Posterior variances in [-VAR_CLAMP, 0) are rounding noise and clamped
# to zero; anything more negative indicates a conditioning failure.
_VAR_CLAMP = 1e-9


class ConditioningError(RuntimeError):
    """Raised when a kernel matrix cannot be factorized even with jitter."""

    def __init__(self, message: str, attempted_jitters: Sequence[float] = ()):
        super().__init__(message)
        self.attempted_jitters = list(attempted_jitters)


def _check_positive(**params: float) -> None:
    for name, value in params.items():
        if not value > 0:
            raise ValueError(f"kernel parameter {name} must be positive, got {value}")


def sq_exp_kernel(
    p: Sequence[float],
    q: Sequence[float],
    sigma_sq: float,
    w_x: float,
    w_y: float,
) -> float:
    """Squared-exponential covariance between two positions.

    Returns ``sigma_sq * exp(-(px-qx)^2 / (2 w_x^2) - (py-qy)^2 / (2 w_y^2))``,
    symmetric in ``p`` and ``q`` and bounded by ``(0, sigma_sq]``.
    """
    _check_positive(sigma_sq=sigma_sq, w_x=w_x, w_y=w_y)
    dx = float(p[0]) - float(q[0])
    dy = float(p[1]) - float(q[1])
    return float(
        sigma_sq * np.exp(-(dx * dx) / (2.0 * w_x * w_x) - (dy * dy) / (2.0 * w_y * w_y))
    )


def kernel_matrix(
    points_a: np.ndarray,
    points_b: np.ndarray,
    sigma_sq: float,
    w_x: float,
    w_y: float,
    noise_sq: float = 0.0,
) -> np.ndarray:
    """Dense covariance block between two position sets.

    ``points_a`` and ``points_b`` are (n, 2) and (m, 2) arrays.  When
    ``noise_sq`` is positive the two sets must be the same set of points
    and ``noise_sq`` is added on the diagonal (the coinciding-point noise
    term).
    """
    _check_positive(sigma_sq=sigma_sq, w_x=w_x, w_y=w_y)
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = np.atleast_2d(np.asarray(points_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("kernel_matrix requires non-empty point sets")
    dx = a[:, 0, None] - b[None, :, 0]
    dy = a[:, 1, None] - b[None, :, 1]
    out = sigma_sq * np.exp(
        -(dx * dx) / (2.0 * w_x * w_x) - (dy * dy) / (2.0 * w_y * w_y)
    )
    if noise_sq > 0.0:
        if a.shape != b.shape or not np.array_equal(a, b):
            raise ValueError("noise is only added on a block of identical points")
        out[np.diag_indices_from(out)] += noise_sq
    return out


def chol_with_jitter(mat: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter.

    ``scale`` sets the jitter magnitude (normally the kernel variance).
    Returns ``(L, jitter_used)``; raises :class:`ConditioningError` with
    the attempted jitter levels after the escalation is exhausted.
    """
    attempted: list[float] = []
    jitter = 0.0
    for retry in range(_JITTER_RETRIES + 2):
        attempted.append(jitter)
        try:
            if jitter > 0.0:
                stabilized = mat + jitter * np.eye(mat.shape[0])
            else:
                stabilized = mat
            return np.linalg.cholesky(stabilized), jitter
        except np.linalg.LinAlgError:
            jitter = _JITTER_BASE * scale if jitter == 0.0 else jitter * 10.0
    raise ConditioningError(
        f"factorization failed for a {mat.shape[0]}x{mat.shape[0]} matrix "
        f"after jitter escalation",
        attempted_jitters=attempted,
    )


def _train_factor(
    train_points: np.ndarray,
    sigma_sq: float,
    w_x: float,
    w_y: float,
    noise_sq: float,
) -> tuple[np.ndarray, float]:
    """Cholesky of the (noisy) training covariance, jittered when needed."""
    k = kernel_matrix(train_points, train_points, sigma_sq, w_x, w_y)
    if noise_sq > 0.0:
        k[np.diag_indices_from(k)] += noise_sq
        return chol_with_jitter(k, sigma_sq)
    # Noise-free training blocks start at the first jitter level directly.
    k[np.diag_indices_from(k)] += _JITTER_BASE * sigma_sq
    L, extra = chol_with_jitter(k, sigma_sq)
    return L, _JITTER_BASE * sigma_sq + extra


def gp_posterior(
    train_points: np.ndarray,
    train_values: np.ndarray,
    test_points: np.ndarray,
    sigma_sq: float,
    w_x: float,
    w_y: float,
    noise_sq: float,
    prior_mean: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of one velocity axis at test positions.

    Conditions the GP on ``train_values`` observed at ``train_points``
    (noise on the training block only) and returns ``(mean, cov)`` at
    ``test_points``.  The covariance is symmetrized and its diagonal is
    clamped at numerical zero.
    """
    train_points = np.atleast_2d(np.asarray(train_points, dtype=float))
    test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
    v = np.asarray(train_values, dtype=float).ravel()
    if train_points.shape[0] == 0:
        raise ValueError("gp_posterior requires a non-empty training set")
    if train_points.shape[0] != v.size:
        raise ValueError("training points and values disagree in length")

    L, _ = _train_factor(train_points, sigma_sq, w_x, w_y, noise_sq)
    k_star = kernel_matrix(train_points, test_points, sigma_sq, w_x, w_y)
    alpha = cho_solve((L, True), v - prior_mean)
    mean = prior_mean + k_star.T @ alpha

    half = solve_triangular(L, k_star, lower=True)
    cov = kernel_matrix(test_points, test_points, sigma_sq, w_x, w_y) - half.T @ half
    cov = 0.5 * (cov + cov.T)
    diag = np.einsum("ii->i", cov)
    if np.any(diag < -_VAR_CLAMP):
        raise ConditioningError(
            f"posterior variance fell below -{_VAR_CLAMP:g}; the training "
            f"matrix is too ill-conditioned"
        )
    np.clip(diag, 0.0, None, out=diag)
    return mean, cov


def gp_marginal_log_likelihood(
    points: np.ndarray,
    values: np.ndarray,
    sigma_sq: float,
    w_x: float,
    w_y: float,
    noise_sq: float,
    prior_mean: float = 0.0,
) -> float:
    """Log-density of observed values under the GP prior with noise.

    This is the usual Gaussian marginal ``N(values; prior_mean, K + noise I)``
    evaluated via Cholesky.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v = np.asarray(values, dtype=float).ravel() - prior_mean
    L, _ = _train_factor(points, sigma_sq, w_x, w_y, noise_sq)
    half = solve_triangular(L, v, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (float(half @ half) + logdet + v.size * _LOG_2PI)


def gaussian_log_density(v: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Exact multivariate normal log-density.

    ``cov`` must be symmetric positive definite up to jitter; dimension
    mismatches raise ``ValueError``.
    """
    v = np.asarray(v, dtype=float).ravel()
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if v.size != mean.size or cov.shape != (v.size, v.size):
        raise ValueError(
            f"dimension mismatch: v has {v.size} entries, cov is {cov.shape}"
        )
    scale = max(float(np.mean(np.diag(cov))), np.finfo(float).tiny)
    L, _ = chol_with_jitter(cov, scale)
    resid = solve_triangular(L, v - mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (float(resid @ resid) + logdet + v.size * _LOG_2PI)


class FieldPosterior:
    """A motion pattern's GP conditioned on its member data, both axes.

    Factorizes the training covariance once per axis and reuses it for
    mean evaluation, sampling, observation densities, and exact
    leave-one-out scoring of training rows.  With an empty training set
    it degenerates to the GP prior.
    """

    def __init__(
        self,
        train_points: np.ndarray,
        train_velocities: np.ndarray,
        params: KernelParams,
        prior_mean: tuple[float, float],
    ):
        self.params = params
        self.prior_mean = (float(prior_mean[0]), float(prior_mean[1]))
        pts = np.asarray(train_points, dtype=float).reshape(-1, 2)
        vel = np.asarray(train_velocities, dtype=float).reshape(-1, 2)
        if pts.shape[0] != vel.shape[0]:
            raise ValueError("points and velocities disagree in length")
        self.train_points = pts
        self.train_velocities = vel
        self.n_train = pts.shape[0]
        self._factors: list[tuple[np.ndarray, np.ndarray]] = []
        if self.n_train:
            for axis in range(2):
                L, _ = _train_factor(
                    pts,
                    params.sigma_sq(axis),
                    params.w_x,
                    params.w_y,
                    params.sigma_n_sq,
                )
                resid = vel[:, axis] - self.prior_mean[axis]
                alpha = cho_solve((L, True), resid)
                self._factors.append((L, alpha))

    @classmethod
    def from_frames(
        cls,
        frames,
        params: KernelParams,
        prior_mean: tuple[float, float],
        max_points: int = 2000,
        subsample_rng: np.random.Generator | None = None,
    ) -> "FieldPosterior":
        """Condition on the stacked data of ``frames``.

        When the stacked point count exceeds ``max_points``, whole frames
        are dropped uniformly at random (seeded by ``subsample_rng``)
        until the budget is met, so member frames are either entirely in
        or entirely out of the training set.
        """
        frames = list(frames)
        total = sum(f.n_vehicles for f in frames)
        if total > max_points and len(frames) > 1:
            rng = subsample_rng or np.random.default_rng(0)
            order = rng.permutation(len(frames))
            kept: list[int] = []
            budget = 0
            for idx in order:
                size = frames[idx].n_vehicles
                if budget + size > max_points and kept:
                    continue
                kept.append(int(idx))
                budget += size
            frames = [frames[i] for i in sorted(kept)]
        if not frames:
            return cls(np.empty((0, 2)), np.empty((0, 2)), params, prior_mean)
        pos = np.concatenate([f.positions for f in frames], axis=0)
        vel = np.concatenate([f.velocities for f in frames], axis=0)
        return cls(pos, vel, params, prior_mean)

    def _cross(self, points: np.ndarray, axis: int) -> np.ndarray:
        return kernel_matrix(
            self.train_points,
            points,
            self.params.sigma_sq(axis),
            self.params.w_x,
            self.params.w_y,
        )

    def mean(self, points: np.ndarray) -> np.ndarray:
        """Posterior mean velocity, shape (m, 2)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.empty_like(points)
        for axis in range(2):
            if self.n_train == 0:
                out[:, axis] = self.prior_mean[axis]
                continue
            _, alpha = self._factors[axis]
            out[:, axis] = self.prior_mean[axis] + self._cross(points, axis).T @ alpha
        return out

    def mean_and_cov(self, points: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and full covariance for one axis (noise-free)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        sigma_sq = self.params.sigma_sq(axis)
        prior = kernel_matrix(
            points, points, sigma_sq, self.params.w_x, self.params.w_y
        )
        if self.n_train == 0:
            return np.full(points.shape[0], self.prior_mean[axis]), prior
        L, alpha = self._factors[axis]
        k_star = self._cross(points, axis)
        mean = self.prior_mean[axis] + k_star.T @ alpha
        half = solve_triangular(L, k_star, lower=True)
        cov = prior - half.T @ half
        cov = 0.5 * (cov + cov.T)
        diag = np.einsum("ii->i", cov)
        if np.any(diag < -_VAR_CLAMP):
            raise ConditioningError("posterior variance fell below the clamp floor")
        np.clip(diag, 0.0, None, out=diag)
        return mean, cov

    def mean_and_var(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and marginal variance, each shape (m, 2)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        means = np.empty_like(points)
        variances = np.empty_like(points)
        for axis in range(2):
            mean, cov = self.mean_and_cov(points, axis)
            means[:, axis] = mean
            variances[:, axis] = np.diag(cov)
        return means, variances

    def log_density(self, points: np.ndarray, velocities: np.ndarray) -> float:
        """Log-density of observed velocities at ``points``, both axes.

        Observation noise is added on the query block, matching how the
        member data itself entered the conditioning.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
        total = 0.0
        for axis in range(2):
            mean, cov = self.mean_and_cov(points, axis)
            cov = cov + self.params.sigma_n_sq * np.eye(cov.shape[0])
            total += gaussian_log_density(velocities[:, axis], mean, cov)
        return total

    def loo_log_density(self, row_slice: slice) -> float:
        """Exact log-density of training rows given all other training rows.

        ``row_slice`` selects one member frame's contiguous rows in the
        stacked training data.  Computed from the cached factorization via
        the precision matrix, so no refactorization is needed.  Equivalent
        to conditioning on the remaining rows with observation noise on
        the held-out block.
        """
        idx = np.arange(self.n_train)[row_slice]
        if idx.size == 0:
            raise ValueError("empty row selection")
        if idx.size == self.n_train:
            # Nothing left to condition on: the prior marginal applies.
            return self.prior_log_density(
                self.train_points, self.train_velocities
            )
        total = 0.0
        unit = np.zeros((self.n_train, idx.size))
        unit[idx, np.arange(idx.size)] = 1.0
        for axis in range(2):
            L, alpha = self._factors[axis]
            q_cols = cho_solve((L, True), unit)
            q_block = q_cols[idx, :]
            q_block = 0.5 * (q_block + q_block.T)
            h = alpha[idx]
            scale = max(float(np.mean(np.diag(q_block))), np.finfo(float).tiny)
            Lq, _ = chol_with_jitter(q_block, scale)
            half = solve_triangular(Lq, h, lower=True)
            # logdet(cov) = -logdet(precision block)
            logdet_q = 2.0 * float(np.sum(np.log(np.diag(Lq))))
            total += -0.5 * (float(half @ half) - logdet_q + idx.size * _LOG_2PI)
        return total

    def prior_log_density(self, points: np.ndarray, velocities: np.ndarray) -> float:
        """Log-density of observations under the unconditioned GP prior."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
        total = 0.0
        for axis in range(2):
            total += gp_marginal_log_likelihood(
                points,
                velocities[:, axis],
                self.params.sigma_sq(axis),
                self.params.w_x,
                self.params.w_y,
                self.params.sigma_n_sq,
                prior_mean=self.prior_mean[axis],
            )
        return total

    def sample(self, points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one correlated velocity realization per axis at ``points``."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.empty_like(points)
        for axis in range(2):
            mean, cov = self.mean_and_cov(points, axis)
            scale = max(
                float(np.mean(np.diag(cov))),
                _JITTER_BASE * self.params.sigma_sq(axis),
            )
            L, _ = chol_with_jitter(
                cov + _JITTER_BASE * scale * np.eye(cov.shape[0]), scale
            )
            out[:, axis] = mean + L @ rng.standard_normal(points.shape[0])
        return out


@dataclass(frozen=True)
class VectorField:
    """Posterior mean and variance velocity evaluated on a regular grid.

    Arrays are (ny, nx), row-major with x varying fastest, so row ``iy``
    holds all x values at ``ys[iy]``.
    """

    xs: np.ndarray
    ys: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    var_x: np.ndarray
    var_y: np.ndarray

    def __post_init__(self) -> None:
        shape = (len(self.ys), len(self.xs))
        for name in ("mean_x", "mean_y", "var_x", "var_y"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
        if np.any(self.var_x < 0) or np.any(self.var_y < 0):
            raise ValueError("variances must be nonnegative")

    @property
    def grid_points(self) -> np.ndarray:
        """(nx*ny, 2) positions, row-major with x fastest."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


def mean_velocity_field(
    posterior: FieldPosterior,
    roi: RegionOfInterest,
    nx: int,
    ny: int,
) -> VectorField:
    """Evaluate a pattern's posterior mean field on an nx-by-ny lattice.

    The lattice spans the region of interest inclusively along both axes.
    """
    if nx < 1 or ny < 1:
        raise ValueError("grid sizes must be positive")
    xs = np.linspace(roi.x_min, roi.x_max, nx)
    ys = np.linspace(roi.y_min, roi.y_max, ny)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    means, variances = posterior.mean_and_var(points)
    return VectorField(
        xs=xs,
        ys=ys,
        mean_x=means[:, 0].reshape(ny, nx),
        mean_y=means[:, 1].reshape(ny, nx),
        var_x=variances[:, 0].reshape(ny, nx),
        var_y=variances[:, 1].reshape(ny, nx),
    )

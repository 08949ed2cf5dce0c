"""Gibbs sampler for the nonparametric mixture of velocity-field patterns.

One sampler iteration sweeps every frame's pattern assignment in index
order, then refreshes each pattern's kernel length scales with a
Metropolis-Hastings step per axis, then redraws the concentration
parameter from its grid-evaluated posterior.

Assignments are maximum-a-posteriori by default: each frame moves to the
candidate with the highest posterior score among the existing patterns
and a freshly integrated "new pattern" option (``assignment_mode="sample"``
switches to a categorical draw).  Scores combine the size-proportional
seating prior with the frame's velocity likelihood under the candidate's
GP, conditioned on the candidate's member data with the frame itself
left out.

Determinism: every random decision draws from a stream derived from
``(seed, purpose, iteration, index)``, and BLAS threading is pinned
inside :func:`run_gibbs`, so results are bit-identical for any worker
count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp
from threadpoolctl import threadpool_limits

from .empirical import CountDistribution, PositionDistribution, fit_count_dist, fit_position_dist
from .gp import ConditioningError, FieldPosterior, gp_marginal_log_likelihood
from .model import (
    Frame,
    KernelParams,
    MixtureState,
    MotionPattern,
    PriorConfig,
    RegionOfInterest,
)

__all__ = [
    "NEW_PATTERN",
    "ScoreBreakdown",
    "GibbsTrace",
    "IterationRecord",
    "crp_log_priors",
    "frame_log_likelihood",
    "new_pattern_log_likelihood",
    "assignment_posterior",
    "update_assignment",
    "update_length_scales",
    "mh_log_accept",
    "alpha_log_density",
    "sample_alpha",
    "update_alpha",
    "run_gibbs",
    "PatternCache",
    "phi_psi_log_prob",
    "held_out_scores",
]

# Sentinel pattern id for the "open a new pattern" candidate.
NEW_PATTERN = -1

_LOG_2PI = float(np.log(2.0 * np.pi))

# Purpose tags for deterministic RNG stream derivation.
_TAG_INIT = 0
_TAG_MC = 1
_TAG_NEWPAT = 2
_TAG_ASSIGN = 3
_TAG_MH = 4
_TAG_ALPHA = 5
_TAG_SUBSAMPLE = 6


def derive_stream(seed: int, tag: int, *key: int) -> np.random.Generator:
    """Independent generator for one (purpose, iteration, index) slot.

    Streams depend only on their key, never on scheduling, which keeps
    parallel runs reproducible.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(tag), *map(int, key)])))


def _gamma_logpdf(w: float, a: float, b: float) -> float:
    """Log-density of the gamma prior (shape ``a``, scale ``b``)."""
    if w <= 0.0:
        return -np.inf
    return float((a - 1.0) * np.log(w) - w / b - gammaln(a) - a * np.log(b))


# ---------------------------------------------------------------------------
# Seating prior
# ---------------------------------------------------------------------------

def crp_log_priors(counts: Sequence[int], alpha: float, n_total: int) -> np.ndarray:
    """Log seating probabilities for existing patterns plus a new one.

    ``counts`` are the per-pattern frame counts with the frame under
    update removed; ``n_total`` is the full dataset size.  Returns
    ``len(counts) + 1`` log-probabilities, the last one for opening a new
    pattern; together they sum to one in probability domain.
    """
    counts = np.asarray(counts, dtype=float)
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    denom = np.log(n_total - 1.0 + alpha)
    with np.errstate(divide="ignore"):
        existing = np.log(counts) - denom
    return np.append(existing, np.log(alpha) - denom)


# ---------------------------------------------------------------------------
# Likelihoods
# ---------------------------------------------------------------------------

def phi_psi_log_prob(
    frame: Frame,
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
) -> float:
    """Count and position factors of the frame likelihood.

    These do not depend on the candidate pattern, so they shift every
    assignment score equally; they are kept so reported log-likelihoods
    are complete.
    """
    total = count_dist.log_prob(frame.n_vehicles)
    for x, y in frame.positions:
        total += position_dist.log_density(float(x), float(y))
    return total


def frame_log_likelihood(
    frame: Frame,
    posterior: FieldPosterior,
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
) -> float:
    """Log-likelihood of a frame under one pattern's conditioned GP.

    ``posterior`` must be conditioned on the pattern's member data with
    the candidate frame itself excluded; an empty training set makes it
    the GP prior, which is the correct degenerate case.
    """
    return phi_psi_log_prob(frame, count_dist, position_dist) + posterior.log_density(
        frame.positions, frame.velocities
    )


def _prior_logpdf_batch(
    positions: np.ndarray,
    velocities: np.ndarray,
    mu0: tuple[float, float],
    sigma0_sq: tuple[float, float],
    sigma_n_sq: float,
    w_draws: np.ndarray,
) -> np.ndarray:
    """Velocity log-density under the new-pattern GP prior per length draw.

    Vectorized over the ``(n_draws, 2)`` array of (w_x, w_y) samples with
    one batched Cholesky per axis; falls back to jittered per-draw
    evaluation if a batch factorization fails.
    """
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    vel = np.asarray(velocities, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    d2x = (pts[:, 0, None] - pts[None, :, 0]) ** 2
    d2y = (pts[:, 1, None] - pts[None, :, 1]) ** 2
    expo = np.exp(
        -d2x[None, :, :] / (2.0 * w_draws[:, 0, None, None] ** 2)
        - d2y[None, :, :] / (2.0 * w_draws[:, 1, None, None] ** 2)
    )
    out = np.zeros(w_draws.shape[0])
    eye = np.arange(n)
    try:
        for axis in range(2):
            k = sigma0_sq[axis] * expo
            k[:, eye, eye] += sigma_n_sq
            chol = np.linalg.cholesky(k)
            resid = np.repeat(
                (vel[:, axis] - mu0[axis])[None, :, None], w_draws.shape[0], axis=0
            )
            half = np.linalg.solve(chol, resid)[..., 0]
            quad = np.einsum("ml,ml->m", half, half)
            logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
            out += -0.5 * (quad + logdet + n * _LOG_2PI)
    except np.linalg.LinAlgError:
        out = np.array(
            [
                sum(
                    gp_marginal_log_likelihood(
                        pts,
                        vel[:, axis],
                        sigma0_sq[axis],
                        float(wx),
                        float(wy),
                        sigma_n_sq,
                        prior_mean=mu0[axis],
                    )
                    for axis in range(2)
                )
                for wx, wy in w_draws
            ]
        )
    return out


def new_pattern_log_likelihood(
    frame: Frame,
    prior: PriorConfig,
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo estimate of the frame likelihood under an unseen pattern.

    Each draw samples new length scales from the gamma prior and scores
    the frame's velocities under the corresponding GP prior; the draws
    are averaged in log domain and the count/position factors added once.
    ``prior`` must be resolved (data mean/variance filled in).
    """
    if prior.mu0_x is None or prior.sigma0_sq_x is None:
        raise ValueError("prior must be resolved against the dataset first")
    w_draws = rng.gamma(shape=prior.a, scale=prior.b, size=(prior.n_mc, 2))
    logs = _prior_logpdf_batch(
        frame.positions,
        frame.velocities,
        (prior.mu0_x, prior.mu0_y),
        (prior.sigma0_sq_x, prior.sigma0_sq_y),
        prior.sigma_n_sq,
        w_draws,
    )
    mc = float(logsumexp(logs) - np.log(prior.n_mc))
    return mc + phi_psi_log_prob(frame, count_dist, position_dist)


# ---------------------------------------------------------------------------
# Pattern posterior cache
# ---------------------------------------------------------------------------

@dataclass
class _CacheEntry:
    version: int
    params: KernelParams
    posterior: FieldPosterior
    slices: dict[int, slice]


class PatternCache:
    """Per-pattern conditioned GPs, rebuilt only when membership or
    hyperparameters change.

    Stacking order is ascending member frame index, so each member's rows
    form a contiguous slice usable for exact leave-one-out scoring.
    Patterns whose stacked data exceeds ``train_cap`` points are capped by
    dropping whole frames, selected by a stream derived from the run seed.
    """

    def __init__(self, frames: Sequence[Frame], seed: int, train_cap: int = 2000):
        self._frames = frames
        self._seed = int(seed)
        self._cap = int(train_cap)
        self._versions: dict[int, int] = {}
        self._entries: dict[int, _CacheEntry] = {}

    def bump(self, pattern_id: int) -> None:
        """Record a membership change for one pattern."""
        self._versions[pattern_id] = self._versions.get(pattern_id, 0) + 1

    def drop(self, pattern_id: int) -> None:
        self._entries.pop(pattern_id, None)
        self._versions.pop(pattern_id, None)

    def _selected_members(self, pattern: MotionPattern) -> list[int]:
        """Member ids entering the training set, whole-frame capped."""
        version = self._versions.get(pattern.pattern_id, 0)
        member_ids = sorted(pattern.member_frames)
        total = sum(self._frames[i].n_vehicles for i in member_ids)
        if total > self._cap and len(member_ids) > 1:
            rng = derive_stream(
                self._seed, _TAG_SUBSAMPLE, pattern.pattern_id, version
            )
            order = rng.permutation(len(member_ids))
            kept: list[int] = []
            budget = 0
            for pos in order:
                size = self._frames[member_ids[pos]].n_vehicles
                if budget + size > self._cap and kept:
                    continue
                kept.append(int(pos))
                budget += size
            member_ids = [member_ids[p] for p in sorted(kept)]
        return member_ids

    def stacked(self, pattern: MotionPattern) -> tuple[np.ndarray, np.ndarray]:
        """Capped stacked member data without building a posterior."""
        member_ids = self._selected_members(pattern)
        if not member_ids:
            return np.empty((0, 2)), np.empty((0, 2))
        return (
            np.concatenate([self._frames[i].positions for i in member_ids]),
            np.concatenate([self._frames[i].velocities for i in member_ids]),
        )

    def entry(self, pattern: MotionPattern) -> _CacheEntry:
        version = self._versions.get(pattern.pattern_id, 0)
        cached = self._entries.get(pattern.pattern_id)
        if cached is not None and cached.version == version and cached.params == pattern.params:
            return cached
        member_ids = self._selected_members(pattern)
        slices: dict[int, slice] = {}
        offset = 0
        for i in member_ids:
            size = self._frames[i].n_vehicles
            slices[i] = slice(offset, offset + size)
            offset += size
        if member_ids:
            pos = np.concatenate([self._frames[i].positions for i in member_ids])
            vel = np.concatenate([self._frames[i].velocities for i in member_ids])
        else:
            pos = np.empty((0, 2))
            vel = np.empty((0, 2))
        entry = _CacheEntry(
            version=version,
            params=pattern.params,
            posterior=FieldPosterior(
                pos, vel, pattern.params, (pattern.prior_mean_x, pattern.prior_mean_y)
            ),
            slices=slices,
        )
        self._entries[pattern.pattern_id] = entry
        return entry

    def posterior_excluding(
        self, pattern: MotionPattern, exclude: int | None
    ) -> FieldPosterior:
        """Conditioned GP on the pattern's members without frame ``exclude``.

        Used by callers that need an explicit posterior object (tests,
        classification); the sampler's hot path scores through
        :meth:`score_frame` instead.
        """
        member_ids = sorted(pattern.member_frames - ({exclude} if exclude is not None else set()))
        kept = [self._frames[i] for i in member_ids]
        rng = derive_stream(
            self._seed,
            _TAG_SUBSAMPLE,
            pattern.pattern_id,
            self._versions.get(pattern.pattern_id, 0),
        )
        return FieldPosterior.from_frames(
            kept,
            pattern.params,
            (pattern.prior_mean_x, pattern.prior_mean_y),
            max_points=self._cap,
            subsample_rng=rng,
        )

    def score_frame(self, frame_index: int, frame: Frame, pattern: MotionPattern) -> float:
        """Velocity log-density of ``frame`` under ``pattern``.

        If the frame is a member it is left out exactly through the
        cached factorization; a sole-member pattern degenerates to the
        prior density.
        """
        entry = self.entry(pattern)
        if frame_index in entry.slices:
            if len(pattern.member_frames) == 1:
                return entry.posterior.prior_log_density(
                    frame.positions, frame.velocities
                )
            return entry.posterior.loo_log_density(entry.slices[frame_index])
        return entry.posterior.log_density(frame.positions, frame.velocities)


# ---------------------------------------------------------------------------
# Assignment scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreBreakdown:
    """Per-candidate score components for one frame.

    ``pattern_ids`` lists existing candidates in ascending id order with
    :data:`NEW_PATTERN` last; skipped candidates (patterns emptied by the
    frame's removal) simply do not appear.
    """

    pattern_ids: tuple[int, ...]
    log_prior: np.ndarray
    log_likelihood: np.ndarray

    @property
    def log_posterior(self) -> np.ndarray:
        return self.log_prior + self.log_likelihood

    def map_choice(self) -> int:
        """Candidate with the highest score; ties resolve to the lowest
        existing pattern id, the new-pattern option only on a strict win."""
        return self.pattern_ids[int(np.argmax(self.log_posterior))]

    def sample_choice(self, rng: np.random.Generator) -> int:
        scores = self.log_posterior
        probs = np.exp(scores - logsumexp(scores))
        probs /= probs.sum()
        return self.pattern_ids[int(rng.choice(len(probs), p=probs))]


def _candidate_scores(
    frame_index: int,
    frame: Frame,
    state: MixtureState,
    frames: Sequence[Frame],
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
    prior: PriorConfig,
    mc_rng: np.random.Generator,
    cache: PatternCache,
    exclude: bool,
    executor: ThreadPoolExecutor | None = None,
) -> ScoreBreakdown:
    """Score all candidates for one frame (pure; never mutates)."""
    live = state.live_ids()
    counts = []
    candidates = []
    for k in live:
        pattern = state.patterns[k]
        n_k = pattern.n_frames - (
            1 if exclude and frame_index in pattern.member_frames else 0
        )
        if n_k == 0:
            continue
        counts.append(n_k)
        candidates.append(k)
    n_total = state.n_frames if exclude else state.n_frames + 1
    log_prior = crp_log_priors(counts, state.alpha, n_total)

    base = phi_psi_log_prob(frame, count_dist, position_dist)

    def score_existing(k: int) -> float:
        if exclude:
            return base + cache.score_frame(frame_index, frame, state.patterns[k])
        entry = cache.entry(state.patterns[k])
        return base + entry.posterior.log_density(frame.positions, frame.velocities)

    if executor is not None and len(candidates) > 1:
        loglik = list(executor.map(score_existing, candidates))
    else:
        loglik = [score_existing(k) for k in candidates]
    loglik.append(
        new_pattern_log_likelihood(frame, prior, count_dist, position_dist, mc_rng)
    )
    return ScoreBreakdown(
        pattern_ids=tuple(candidates) + (NEW_PATTERN,),
        log_prior=log_prior,
        log_likelihood=np.asarray(loglik, dtype=float),
    )


def assignment_posterior(
    frame_index: int,
    state: MixtureState,
    frames: Sequence[Frame],
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
    prior: PriorConfig,
    rng: np.random.Generator,
    cache: PatternCache | None = None,
    executor: ThreadPoolExecutor | None = None,
) -> ScoreBreakdown:
    """Posterior assignment scores for a training frame.

    The frame is treated as removed from its current pattern: seating
    counts drop by one there, its own pattern's likelihood conditions on
    the remaining members, and a pattern it would leave empty is skipped.
    Never mutates the state.
    """
    cache = cache or PatternCache(frames, prior.rng_seed)
    return _candidate_scores(
        frame_index,
        frames[frame_index],
        state,
        frames,
        count_dist,
        position_dist,
        prior,
        rng,
        cache,
        exclude=True,
        executor=executor,
    )


def held_out_scores(
    frame: Frame,
    state: MixtureState,
    frames: Sequence[Frame],
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
    prior: PriorConfig,
    rng: np.random.Generator,
    cache: PatternCache | None = None,
) -> ScoreBreakdown:
    """Assignment scores for a frame outside the training set.

    Seating uses the full member counts over ``N + alpha`` and every
    pattern conditions on all of its member data.
    """
    cache = cache or PatternCache(frames, prior.rng_seed)
    return _candidate_scores(
        -1,
        frame,
        state,
        frames,
        count_dist,
        position_dist,
        prior,
        rng,
        cache,
        exclude=False,
    )


def _fresh_params(prior: PriorConfig, rng: np.random.Generator) -> KernelParams:
    """Kernel parameters for a newly opened pattern: gamma-drawn lengths,
    variance pinned to the dataset variance."""
    if prior.sigma0_sq_x is None or prior.sigma0_sq_y is None:
        raise ValueError("prior must be resolved against the dataset first")
    w_x, w_y = rng.gamma(shape=prior.a, scale=prior.b, size=2)
    return KernelParams(
        sigma_sq_x=prior.sigma0_sq_x,
        sigma_sq_y=prior.sigma0_sq_y,
        w_x=float(w_x),
        w_y=float(w_y),
        sigma_n_sq=prior.sigma_n_sq,
    )


def update_assignment(
    frame_index: int,
    state: MixtureState,
    frames: Sequence[Frame],
    count_dist: CountDistribution,
    position_dist: PositionDistribution,
    prior: PriorConfig,
    mc_rng: np.random.Generator,
    newpat_rng: np.random.Generator,
    assign_rng: np.random.Generator | None = None,
    cache: PatternCache | None = None,
    mode: str = "map",
    executor: ThreadPoolExecutor | None = None,
) -> int:
    """Reassign one frame in place and return the chosen pattern id.

    MAP mode takes the argmax of the scores; sample mode draws from the
    normalized posterior using ``assign_rng``.  Opening a new pattern
    draws fresh length scales from ``newpat_rng``.  A frame that is the
    sole member of its pattern and would open a new one simply stays put,
    keeping its pattern id stable.
    """
    cache = cache or PatternCache(frames, prior.rng_seed)
    scores = assignment_posterior(
        frame_index,
        state,
        frames,
        count_dist,
        position_dist,
        prior,
        mc_rng,
        cache=cache,
        executor=executor,
    )
    if mode == "map":
        chosen = scores.map_choice()
    elif mode == "sample":
        if assign_rng is None:
            raise ValueError("sample mode needs an assignment rng")
        chosen = scores.sample_choice(assign_rng)
    else:
        raise ValueError(f"unknown assignment mode {mode!r}")

    current = int(state.assignments[frame_index])
    if chosen == current:
        return current
    if chosen == NEW_PATTERN and state.patterns[current].n_frames == 1:
        return current

    # Detach from the current pattern.
    old = state.patterns[current]
    old.member_frames.discard(frame_index)
    if old.n_frames == 0:
        del state.patterns[current]
        cache.drop(current)
    else:
        cache.bump(current)

    if chosen == NEW_PATTERN:
        new_id = state.next_pattern_id
        state.next_pattern_id += 1
        state.patterns[new_id] = MotionPattern(
            pattern_id=new_id,
            member_frames={frame_index},
            params=_fresh_params(prior, newpat_rng),
            prior_mean_x=prior.mu0_x,
            prior_mean_y=prior.mu0_y,
        )
        state.assignments[frame_index] = new_id
        cache.bump(new_id)
        return new_id

    state.patterns[chosen].member_frames.add(frame_index)
    state.assignments[frame_index] = chosen
    cache.bump(chosen)
    return chosen


# ---------------------------------------------------------------------------
# Hyperparameter moves
# ---------------------------------------------------------------------------

def mh_log_accept(
    log_target_current: float,
    log_target_proposal: float,
    current: float,
    proposal: float,
) -> float:
    """Log acceptance ratio for the multiplicative log-normal proposal.

    The ``log(proposal) - log(current)`` term corrects the proposal
    asymmetry; an identity proposal gives exactly zero (always accepted).
    """
    return (
        log_target_proposal
        - log_target_current
        + float(np.log(proposal))
        - float(np.log(current))
    )


def length_scale_log_target(
    points: np.ndarray,
    velocities: np.ndarray,
    params: KernelParams,
    prior: PriorConfig,
    prior_mean: tuple[float, float],
    w_x: float,
    w_y: float,
) -> tuple[float, float]:
    """Unnormalized log posterior of the length scales given member data.

    Returns ``(log_target, data_log_likelihood)`` where the target adds
    the gamma prior of both scales to the GP marginal of both axes.
    """
    loglik = 0.0
    vel = np.asarray(velocities, dtype=float).reshape(-1, 2)
    for axis in range(2):
        loglik += gp_marginal_log_likelihood(
            points,
            vel[:, axis],
            params.sigma_sq(axis),
            w_x,
            w_y,
            params.sigma_n_sq,
            prior_mean=prior_mean[axis],
        )
    target = (
        _gamma_logpdf(w_x, prior.a, prior.b)
        + _gamma_logpdf(w_y, prior.a, prior.b)
        + loglik
    )
    return target, loglik


def update_length_scales(
    pattern: MotionPattern,
    points: np.ndarray,
    velocities: np.ndarray,
    prior: PriorConfig,
    rng: np.random.Generator,
    step: float = 0.2,
) -> float:
    """One Metropolis-Hastings step per axis on the kernel length scales.

    ``points``/``velocities`` are the pattern's stacked member data.
    Mutates ``pattern.params`` in place and returns the data
    log-likelihood at the final scales.  A proposal whose factorization
    fails is rejected, never fatal.
    """
    prior_mean = (pattern.prior_mean_x, pattern.prior_mean_y)
    w = [pattern.params.w_x, pattern.params.w_y]
    current_target, current_loglik = length_scale_log_target(
        points, velocities, pattern.params, prior, prior_mean, w[0], w[1]
    )
    for axis in range(2):
        proposal = float(w[axis] * np.exp(step * rng.standard_normal()))
        trial = [w[0], w[1]]
        trial[axis] = proposal
        try:
            prop_target, prop_loglik = length_scale_log_target(
                points, velocities, pattern.params, prior, prior_mean, trial[0], trial[1]
            )
        except ConditioningError:
            continue
        log_acc = mh_log_accept(current_target, prop_target, w[axis], proposal)
        if np.log(rng.uniform()) < log_acc:
            w[axis] = proposal
            current_target, current_loglik = prop_target, prop_loglik
    pattern.params = pattern.params.with_lengths(w[0], w[1])
    return current_loglik


def alpha_log_density(alpha, n_patterns: int, n_frames: int):
    """Unnormalized log posterior of the concentration parameter.

    ``(K - 3/2) log a - 1/(2a) + log G(a) - log G(N + a)`` with the
    log-gamma function throughout; vectorized over ``alpha``.
    """
    a = np.asarray(alpha, dtype=float)
    out = (
        (n_patterns - 1.5) * np.log(a)
        - 1.0 / (2.0 * a)
        + gammaln(a)
        - gammaln(n_frames + a)
    )
    return float(out) if out.ndim == 0 else out


def sample_alpha(
    n_patterns: int,
    n_frames: int,
    rng: np.random.Generator,
    grid_lo: float = 1e-3,
    grid_hi: float = 1e3,
    grid_size: int = 1000,
) -> float:
    """Draw the concentration parameter by inverse-CDF on a log grid.

    The unnormalized density is evaluated on ``grid_size`` log-spaced
    points, integrated with the trapezoid rule, and inverted at a single
    uniform draw with linear interpolation inside the chosen cell.
    """
    grid = np.geomspace(grid_lo, grid_hi, grid_size)
    logf = alpha_log_density(grid, n_patterns, n_frames)
    f = np.exp(logf - np.max(logf))
    increments = 0.5 * (f[1:] + f[:-1]) * np.diff(grid)
    cdf = np.concatenate([[0.0], np.cumsum(increments)])
    cdf /= cdf[-1]
    return float(np.interp(rng.uniform(), cdf, grid))


def update_alpha(
    state: MixtureState,
    rng: np.random.Generator,
    grid_lo: float = 1e-3,
    grid_hi: float = 1e3,
    grid_size: int = 1000,
) -> float:
    """Redraw the concentration parameter in place."""
    state.alpha = sample_alpha(
        state.n_patterns, state.n_frames, rng, grid_lo, grid_hi, grid_size
    )
    return state.alpha


# ---------------------------------------------------------------------------
# The full loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationRecord:
    """One completed Gibbs iteration."""

    iteration: int
    n_patterns: int
    alpha: float
    counts: dict[int, int]
    total_log_likelihood: float
    seconds: float


@dataclass
class GibbsTrace:
    """Per-iteration sampler diagnostics."""

    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def _format_progress(rec: IterationRecord) -> str:
    return (
        f"iter={rec.iteration} K={rec.n_patterns} alpha={rec.alpha:.6g} "
        f"loglik={rec.total_log_likelihood:.6f} seconds={rec.seconds:.3f}"
    )


def init_state(
    frames: Sequence[Frame], prior: PriorConfig
) -> MixtureState:
    """Starting state: one pattern holding every frame.

    Length scales come from the gamma prior, the concentration parameter
    from an inverse draw of a unit-gamma variable.
    """
    rng = derive_stream(prior.rng_seed, _TAG_INIT)
    params = _fresh_params(prior, rng)
    alpha = float(1.0 / rng.gamma(shape=1.0, scale=1.0))
    first_id = 1
    pattern = MotionPattern(
        pattern_id=first_id,
        member_frames=set(range(len(frames))),
        params=params,
        prior_mean_x=prior.mu0_x,
        prior_mean_y=prior.mu0_y,
    )
    return MixtureState(
        assignments=np.full(len(frames), first_id, dtype=int),
        patterns={first_id: pattern},
        alpha=alpha,
        next_pattern_id=first_id + 1,
    )


def run_gibbs(
    frames: Sequence[Frame],
    prior: PriorConfig,
    roi: RegionOfInterest,
    dists: tuple[CountDistribution, PositionDistribution] | None = None,
    n_workers: int = 1,
    assignment_mode: str = "map",
    train_cap: int = 2000,
    alpha_grid: tuple[float, float, int] = (1e-3, 1e3, 1000),
    progress: Callable[[str], None] | None = None,
) -> tuple[MixtureState, GibbsTrace]:
    """Fit the mixture by Gibbs sampling and return the state plus trace.

    Each iteration sweeps assignments in frame order, refreshes every
    pattern's length scales, then redraws the concentration parameter.
    Fully deterministic given ``prior.rng_seed``: results do not depend
    on ``n_workers`` (BLAS threading is pinned to one thread inside the
    loop and worker reductions happen in fixed order).

    A numerical failure mid-run raises :class:`ConditioningError` with
    the partial trace attached as ``exc.trace``.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("cannot fit on an empty dataset")
    prior = prior.resolved(frames)
    if dists is None:
        dists = (fit_count_dist(frames), fit_position_dist(frames, roi))
    count_dist, position_dist = dists

    state = init_state(frames, prior)
    trace = GibbsTrace()
    cache = PatternCache(frames, prior.rng_seed, train_cap=train_cap)
    phi_psi_total = sum(
        phi_psi_log_prob(f, count_dist, position_dist) for f in frames
    )

    executor = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        with threadpool_limits(limits=1):
            for it in range(prior.n_gibbs):
                t0 = time.perf_counter()
                try:
                    for i in range(len(frames)):
                        update_assignment(
                            i,
                            state,
                            frames,
                            count_dist,
                            position_dist,
                            prior,
                            mc_rng=derive_stream(prior.rng_seed, _TAG_MC, it, i),
                            newpat_rng=derive_stream(prior.rng_seed, _TAG_NEWPAT, it, i),
                            assign_rng=derive_stream(prior.rng_seed, _TAG_ASSIGN, it, i),
                            cache=cache,
                            mode=assignment_mode,
                            executor=executor,
                        )
                    data_loglik = 0.0
                    for k in state.live_ids():
                        pattern = state.patterns[k]
                        points, velocities = cache.stacked(pattern)
                        data_loglik += update_length_scales(
                            pattern,
                            points,
                            velocities,
                            prior,
                            derive_stream(prior.rng_seed, _TAG_MH, it, k),
                        )
                    update_alpha(
                        state,
                        derive_stream(prior.rng_seed, _TAG_ALPHA, it),
                        *alpha_grid,
                    )
                except ConditioningError as exc:
                    exc.trace = trace
                    raise
                rec = IterationRecord(
                    iteration=it,
                    n_patterns=state.n_patterns,
                    alpha=state.alpha,
                    counts=state.counts(),
                    total_log_likelihood=data_loglik + phi_psi_total,
                    seconds=time.perf_counter() - t0,
                )
                trace.records.append(rec)
                if progress is not None:
                    progress(_format_progress(rec))
    finally:
        if executor is not None:
            executor.shutdown(wait=False)
    return state, trace

"""
Multi-output GP regression over the joint ``(y, f)`` process.

Observations are stacked all-Y-then-all-F, matching the block layout of
:func:`pdegp.kernels.assemble_joint`.  Noise is heteroscedastic and fixed:
each observation carries its own known variance.

Log densities are returned with the usual sign (larger is better).  The
sampler works with ``phi = log(param)`` so helpers for the unconstrained
target, including the ``sum(phi)`` log-Jacobian, live here as well.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import linalg, optimize

from .errors import IllConditionedKernelError, InvalidInputError, NegativeVarianceError
from .kernels import (
    PARAM_NAMES,
    KernelHypers,
    PdeParams,
    as_points,
    assemble_joint,
    kernel_matrix,
    pack_params,
    unpack_params,
)
from .priors import LogUniform, Prior

__all__ = [
    "Observations",
    "NoiseModel",
    "PredictionField",
    "DEFAULT_JITTER",
    "MAX_JITTER",
    "log_marginal_likelihood",
    "grad_log_marginal_likelihood",
    "log_posterior",
    "grad_log_posterior",
    "log_posterior_unconstrained",
    "grad_log_posterior_unconstrained",
    "LogPosterior",
    "predict",
    "predict_y_from_f",
    "prior_variance",
    "fit_map",
]

log = logging.getLogger(__name__)

DEFAULT_JITTER = 1e-10
MAX_JITTER = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)
_VAR_CLAMP = 1e-10


@dataclass
class Observations:
    """Stacked observation vector ``S = (Y_1..Y_ny, F_1..F_nf)``."""

    points_y: np.ndarray
    points_f: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points_y = as_points(self.points_y)
        self.points_f = as_points(self.points_f)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.values) != self.n_y + self.n_f:
            raise InvalidInputError(
                f"{len(self.values)} values for {self.n_y} Y points and {self.n_f} F points"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("observed values must be finite")

    @classmethod
    def from_channels(cls, points_y=(), y=(), points_f=(), f=()):
        return cls(points_y, points_f, np.concatenate([np.asarray(y, float).ravel(), np.asarray(f, float).ravel()]))

    @property
    def n_y(self):
        return len(self.points_y)

    @property
    def n_f(self):
        return len(self.points_f)

    @property
    def n(self):
        return self.n_y + self.n_f


@dataclass
class NoiseModel:
    """Diagonal of the measurement covariance, one entry per stacked observation."""

    variances: np.ndarray

    def __post_init__(self):
        self.variances = np.asarray(self.variances, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.variances)) or np.any(self.variances <= 0):
            raise InvalidInputError("noise variances must be finite and > 0")

    @classmethod
    def homoscedastic(cls, variance: float, n: int):
        return cls(np.full(n, float(variance)))


@dataclass
class PredictionField:
    points: np.ndarray
    channels: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    @property
    def sd(self):
        return np.sqrt(self.variance)


def _check(obs: Observations, noise: NoiseModel):
    if obs.n == 0:
        raise InvalidInputError("empty training set")
    if len(noise.variances) != obs.n:
        raise InvalidInputError(f"noise has {len(noise.variances)} entries for {obs.n} observations")


def _jitter_levels(jitter):
    levels = [] if jitter > 0 else [0.0]
    level = jitter if jitter > 0 else DEFAULT_JITTER
    while level <= MAX_JITTER * (1 + 1e-9):
        levels.append(level)
        level *= 10.0
    return levels


def _cholesky(cov: np.ndarray, jitter: float):
    """Lower Cholesky factor of ``cov + level * mean(diag) * I`` at the first level that works."""
    if not np.all(np.isfinite(cov)):
        raise IllConditionedKernelError("covariance contains non-finite entries", ())
    scale = float(np.mean(np.diag(cov)))
    tried = []
    for level in _jitter_levels(jitter):
        tried.append(level)
        try:
            chol = linalg.cholesky(cov + (level * scale) * np.eye(len(cov)), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if level > jitter:
            log.debug("cholesky needed jitter %.1e", level)
        return chol, level
    raise IllConditionedKernelError(f"covariance not positive definite after jitter up to {tried[-1]:.0e}", tried)


class _Solve:
    """Factorized ``K + Sigma`` for one parameter setting."""

    def __init__(self, obs, noise, hypers, theta, jitter=DEFAULT_JITTER, with_grads=False):
        _check(obs, noise)
        self.obs = obs
        self.hypers = hypers
        self.theta = theta
        with np.errstate(over="ignore", divide="ignore", invalid="ignore", under="ignore"):
            self.joint = assemble_joint(obs.points_y, obs.points_f, hypers, theta, with_grads=with_grads)
        if with_grads and not all(np.all(np.isfinite(g)) for g in self.joint.grads):
            raise IllConditionedKernelError("kernel gradients overflowed at these parameters", ())
        cov = self.joint.matrix + np.diag(noise.variances)
        self.chol, self.jitter = _cholesky(cov, jitter)
        self.alpha = linalg.cho_solve((self.chol, True), obs.values, check_finite=False)

    def log_likelihood(self):
        n = self.obs.n
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return -0.5 * (n * _LOG_2PI + logdet) - 0.5 * float(self.obs.values @ self.alpha)

    def grad(self):
        kinv, info = linalg.lapack.dpotri(self.chol, lower=1)
        if info != 0:
            raise IllConditionedKernelError(f"inverse from Cholesky factor failed (info={info})", (self.jitter,))
        kinv = np.tril(kinv) + np.tril(kinv, -1).T
        w = np.outer(self.alpha, self.alpha) - kinv
        return 0.5 * np.einsum("ij,kij->k", w, np.asarray(self.joint.grads))


def log_marginal_likelihood(obs, noise, hypers: KernelHypers, theta: PdeParams, jitter=DEFAULT_JITTER) -> float:
    """Gaussian log density of the stacked observations under ``K + Sigma``."""
    return _Solve(obs, noise, hypers, theta, jitter).log_likelihood()


def grad_log_marginal_likelihood(obs, noise, hypers, theta, jitter=DEFAULT_JITTER) -> np.ndarray:
    """Gradient of :func:`log_marginal_likelihood`, ordered as ``PARAM_NAMES``.

    Each component is ``0.5 * sum((a a^T - (K+Sigma)^-1) * dK/dp)`` with
    ``a = (K+Sigma)^-1 S``.
    """
    return _Solve(obs, noise, hypers, theta, jitter, with_grads=True).grad()


def _prior_list(priors: Mapping[str, Prior] | None):
    priors = dict(priors or {})
    unknown = set(priors) - set(PARAM_NAMES)
    if unknown:
        raise InvalidInputError(f"priors given for unknown parameters {sorted(unknown)}")
    return [priors.get(name, LogUniform()) for name in PARAM_NAMES]


def _log_prior(params, priors):
    plist = _prior_list(priors)
    value = sum(p.log_pdf(v) for p, v in zip(plist, params))
    grad = np.array([p.dlog_pdf(v) for p, v in zip(plist, params)])
    return value, grad


def log_posterior(obs, noise, hypers, theta, priors=None, jitter=DEFAULT_JITTER) -> float:
    """Unnormalized log posterior on the constrained scale."""
    params = pack_params(theta, hypers)
    return log_marginal_likelihood(obs, noise, hypers, theta, jitter) + _log_prior(params, priors)[0]


def grad_log_posterior(obs, noise, hypers, theta, priors=None, jitter=DEFAULT_JITTER) -> np.ndarray:
    params = pack_params(theta, hypers)
    return grad_log_marginal_likelihood(obs, noise, hypers, theta, jitter) + _log_prior(params, priors)[1]


class LogPosterior:
    """Log posterior in ``phi = log(param)`` coordinates with optional frozen parameters.

    Parameters
    ----------
    obs, noise : Observations, NoiseModel
    priors : mapping of parameter name to Prior, optional
        Missing entries default to :class:`~pdegp.priors.LogUniform`, which is
        flat in ``phi``, so the Jacobian cancels and the target is the likelihood.
    fixed : mapping of parameter name to value, optional
        Parameters held constant; they are excluded from ``phi``.
    jitter : float
        Initial relative jitter for the Cholesky factorization.

    Notes
    -----
    The most recent evaluation is cached so that the value and gradient at
    the same point share a single factorization.
    """

    def __init__(self, obs, noise, priors=None, fixed=None, jitter=DEFAULT_JITTER):
        _check(obs, noise)
        self.obs = obs
        self.noise = noise
        self.priors = _prior_list(priors)
        fixed = dict(fixed or {})
        unknown = set(fixed) - set(PARAM_NAMES)
        if unknown:
            raise InvalidInputError(f"cannot fix unknown parameters {sorted(unknown)}")
        for name, value in fixed.items():
            if not value > 0:
                raise InvalidInputError(f"fixed value for {name} must be > 0")
        self.fixed = fixed
        self.free_names = tuple(n for n in PARAM_NAMES if n not in fixed)
        self.free_index = np.array([PARAM_NAMES.index(n) for n in self.free_names], dtype=int)
        self.jitter = jitter
        self._cache_key = None
        self._cache_val = None

    @property
    def dim(self):
        return len(self.free_names)

    def constrained(self, phi) -> np.ndarray:
        """Full parameter vector (all six, ``PARAM_NAMES`` order) for free log-coordinates ``phi``."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise InvalidInputError(f"phi must have shape ({self.dim},), got {phi.shape}")
        full = np.array([self.fixed.get(n, np.nan) for n in PARAM_NAMES])
        with np.errstate(over="ignore"):
            full[self.free_index] = np.exp(phi)  # overflow is reported as -inf by value_and_grad
        return full

    def unconstrained(self, params) -> np.ndarray:
        """Free log-coordinates from a full constrained vector or a name mapping."""
        if isinstance(params, Mapping):
            params = [params[n] if n in params else self.fixed[n] for n in PARAM_NAMES]
        params = np.asarray(params, dtype=float)
        if np.any(params[self.free_index] <= 0):
            raise InvalidInputError("initial parameters must be strictly positive")
        return np.log(params[self.free_index])

    def value_and_grad(self, phi):
        phi = np.asarray(phi, dtype=float)
        key = phi.tobytes()
        if key == self._cache_key:
            return self._cache_val
        params = self.constrained(phi)
        if not np.all(np.isfinite(params) & (params > 0)):
            # exp(phi) over/underflowed: report an infinitely bad point
            return -np.inf, np.full(self.dim, np.nan)
        theta, hypers = unpack_params(params)
        solve = _Solve(self.obs, self.noise, hypers, theta, self.jitter, with_grads=True)
        lp = solve.log_likelihood()
        g = solve.grad()
        for i, (prior, value) in enumerate(zip(self.priors, params)):
            if PARAM_NAMES[i] in self.fixed:
                continue
            lp += prior.log_pdf(value)
            g[i] += prior.dlog_pdf(value)
        # chain rule d/dphi = param * d/dparam, plus log-Jacobian sum(phi)
        g_phi = g[self.free_index] * params[self.free_index] + 1.0
        lp += float(np.sum(phi))
        self._cache_key = key
        self._cache_val = (lp, g_phi)
        return lp, g_phi

    def __call__(self, phi):
        return self.value_and_grad(phi)[0]

    def grad(self, phi):
        return self.value_and_grad(phi)[1]

    def potential(self, phi):
        """HMC potential energy ``U = -log posterior`` and its gradient."""
        lp, g = self.value_and_grad(phi)
        return -lp, -g


def log_posterior_unconstrained(phi, obs, noise, priors=None, jitter=DEFAULT_JITTER) -> float:
    """Log posterior of all six parameters in log coordinates, Jacobian included."""
    return LogPosterior(obs, noise, priors, jitter=jitter)(phi)


def grad_log_posterior_unconstrained(phi, obs, noise, priors=None, jitter=DEFAULT_JITTER) -> np.ndarray:
    return LogPosterior(obs, noise, priors, jitter=jitter).grad(phi)


def _channels(channels, m):
    ch = np.asarray(channels).astype(str).reshape(-1)
    if ch.size == 1 and m != 1:
        ch = np.repeat(ch, m)
    ch = np.char.upper(ch)
    if len(ch) != m or not np.all(np.isin(ch, ["Y", "F"])):
        raise InvalidInputError("target channels must be 'Y' or 'F', one per target point")
    return ch


def prior_variance(channels, hypers: KernelHypers, theta: PdeParams) -> np.ndarray:
    """Zero-separation prior variance for each target channel."""
    origin = np.zeros((1, 2))
    vyy = kernel_matrix(origin, origin, "yy", hypers, theta)[0, 0]
    vff = kernel_matrix(origin, origin, "ff", hypers, theta)[0, 0]
    return np.where(np.asarray(channels) == "Y", vyy, vff)


def _finish_variance(var, prior_var):
    floor = -_VAR_CLAMP * prior_var
    if np.any(var < floor):
        worst = float(np.min(var / prior_var))
        raise NegativeVarianceError(f"posterior variance {worst:.3e} x prior variance is below round-off")
    return np.maximum(var, 0.0)


def predict(obs, noise, hypers, theta, targets, channels="Y", jitter=DEFAULT_JITTER) -> PredictionField:
    """Posterior mean and variance of ``y`` and/or ``f`` at target points.

    Parameters
    ----------
    obs, noise : Observations, NoiseModel
    hypers, theta : KernelHypers, PdeParams
    targets : array_like, shape (m, 2)
    channels : str or sequence of str
        ``'Y'`` or ``'F'`` per target, or a single channel for all of them.

    Returns
    -------
    PredictionField
    """
    solve = _Solve(obs, noise, hypers, theta, jitter)
    pts = as_points(targets)
    ch = _channels(channels, len(pts))
    kstar = np.zeros((obs.n, len(pts)))
    for tc in ("Y", "F"):
        cols = ch == tc
        if not np.any(cols):
            continue
        kstar[: obs.n_y, cols] = kernel_matrix(obs.points_y, pts[cols], "y" + tc.lower(), hypers, theta)
        kstar[obs.n_y :, cols] = kernel_matrix(obs.points_f, pts[cols], "f" + tc.lower(), hypers, theta)
    mean = kstar.T @ solve.alpha
    v = linalg.solve_triangular(solve.chol, kstar, lower=True, check_finite=False)
    pv = prior_variance(ch, hypers, theta)
    var = _finish_variance(pv - np.sum(v * v, axis=0), pv)
    return PredictionField(points=pts, channels=ch, mean=mean, variance=var)


def predict_y_from_f(obs, noise, hypers, theta, targets, jitter=DEFAULT_JITTER) -> PredictionField:
    """Predict the latent ``y`` field from forcing observations alone.

    This is a probabilistic solve of the PDE: ``y`` is never simulated, only
    conditioned on ``f`` through the cross-covariance ``k_yf``.
    """
    if obs.n_f == 0:
        raise InvalidInputError("empty training set: no F observations")
    if obs.n_y:
        raise InvalidInputError("predict_y_from_f expects F-only observations")
    if len(noise.variances) != obs.n_f:
        raise InvalidInputError(f"noise has {len(noise.variances)} entries for {obs.n_f} observations")
    pts = as_points(targets)
    kff = kernel_matrix(obs.points_f, obs.points_f, "ff", hypers, theta)
    chol, _ = _cholesky(kff + np.diag(noise.variances), jitter)
    kyf = kernel_matrix(pts, obs.points_f, "yf", hypers, theta)
    mean = kyf @ linalg.cho_solve((chol, True), obs.values, check_finite=False)
    v = linalg.solve_triangular(chol, kyf.T, lower=True, check_finite=False)
    ch = np.full(len(pts), "Y")
    pv = prior_variance(ch, hypers, theta)
    var = _finish_variance(pv - np.sum(v * v, axis=0), pv)
    return PredictionField(points=pts, channels=ch, mean=mean, variance=var)


def fit_map(obs, noise, init, priors=None, fixed=None, jitter=DEFAULT_JITTER, **options):
    """Maximize the unconstrained log posterior with L-BFGS.

    Parameters
    ----------
    init : sequence of float or mapping
        Starting point on the constrained scale.

    Returns
    -------
    params : ndarray
        Full constrained vector at the optimum, ``PARAM_NAMES`` order.
    result : scipy.optimize.OptimizeResult
    """
    target = LogPosterior(obs, noise, priors, fixed, jitter)
    phi0 = target.unconstrained(init)

    def objective(phi):
        try:
            lp, g = target.value_and_grad(phi)
        except IllConditionedKernelError:
            return np.inf, np.zeros_like(phi)
        return -lp, -g

    opts = {"gtol": 1e-8, "ftol": 1e-15, "maxiter": 2000}
    opts.update(options)
    res = optimize.minimize(objective, phi0, jac=True, method="L-BFGS-B", options=opts)
    return target.constrained(res.x), res


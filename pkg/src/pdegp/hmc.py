"""
Hybrid Monte Carlo over unconstrained log-parameters.

The potential energy is ``U(phi) = -log p(phi | data)`` and momenta are drawn
from ``N(0, M)`` with a diagonal mass matrix ``M``.  Warmup tunes the step
size by dual averaging and sets ``M`` to the reciprocal of the sampled
variances, so that ``M^-1`` approximates the posterior covariance.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import AdaptationError, ConfigError, IllConditionedKernelError, InvalidInputError
from .kernels import PARAM_NAMES

__all__ = [
    "HmcConfig",
    "ChainState",
    "StepInfo",
    "Chain",
    "PosteriorSummary",
    "DivergentTrajectory",
    "hamiltonian",
    "leapfrog",
    "hmc_step",
    "sample",
    "run_chain",
    "run_chains",
    "summarize",
    "effective_sample_size",
]

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)

PotentialFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class DivergentTrajectory(ArithmeticError):
    """Energy became non-finite or drifted past the divergence threshold."""


@dataclass
class HmcConfig:
    n_warmup: int = 1000
    n_samples: int = 7000
    leapfrog_steps: int = 20
    step_size: float = 0.1
    mass_diag: Sequence[float] | None = None
    target_accept: float = 0.8
    seed: int = 0
    sampled_params: Sequence[str] = PARAM_NAMES
    jitter_steps: bool = True
    adapt_step_size: bool = True
    adapt_mass: bool = True
    max_delta_h: float = 1000.0

    def validate(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1; summaries over warmup draws are not supported")
        if self.n_warmup < 0:
            raise ConfigError("n_warmup must be >= 0")
        if self.leapfrog_steps < 1:
            raise ConfigError("leapfrog_steps must be >= 1")
        if not self.step_size > 0:
            raise ConfigError("step_size must be > 0")
        if not 0 < self.target_accept < 1:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.mass_diag is not None and np.any(np.asarray(self.mass_diag, float) <= 0):
            raise ConfigError("mass_diag entries must be > 0")
        unknown = set(self.sampled_params) - set(PARAM_NAMES)
        if unknown:
            raise ConfigError(f"unknown sampled parameters {sorted(unknown)}")
        if not self.sampled_params:
            raise ConfigError("at least one parameter must be sampled")
        return self


@dataclass
class ChainState:
    position: np.ndarray
    momentum: np.ndarray
    potential: float
    grad: np.ndarray

    @classmethod
    def at(cls, position, potential_fn: PotentialFn, momentum=None):
        position = np.asarray(position, dtype=float)
        u, g = potential_fn(position)
        if momentum is None:
            momentum = np.zeros_like(position)
        return cls(position, np.asarray(momentum, dtype=float), float(u), np.asarray(g, dtype=float))


@dataclass
class StepInfo:
    accepted: bool
    accept_prob: float
    divergent: bool
    delta_h: float
    n_steps: int


def _mass(mass_diag, d):
    if mass_diag is None:
        return np.ones(d)
    m = np.asarray(mass_diag, dtype=float)
    if m.shape != (d,) or np.any(m <= 0):
        raise InvalidInputError(f"mass_diag must be {d} positive entries")
    return m


def hamiltonian(state: ChainState, mass_diag=None) -> float:
    """Total energy ``U + 0.5 log((2 pi)^d |M|) + 0.5 h^T M^-1 h``."""
    m = _mass(mass_diag, len(state.position))
    d = len(m)
    kinetic = 0.5 * float(np.sum(state.momentum**2 / m))
    return state.potential + 0.5 * (d * _LOG_2PI + float(np.sum(np.log(m)))) + kinetic


def leapfrog(state: ChainState, step_size: float, n_steps: int, mass_diag, potential_fn: PotentialFn) -> ChainState:
    """Integrate Hamilton's equations for ``n_steps`` leapfrog steps.

    Raises
    ------
    DivergentTrajectory
        If the potential or its gradient becomes non-finite, or the kernel
        cannot be factorized along the path.
    """
    if not step_size > 0:
        raise InvalidInputError("step_size must be > 0")
    if int(n_steps) != n_steps or n_steps < 1:
        raise InvalidInputError("leapfrog needs n_steps >= 1")
    m = _mass(mass_diag, len(state.position))
    q = state.position.copy()
    h = state.momentum.copy()
    g = state.grad
    u = state.potential
    for _ in range(int(n_steps)):
        h = h - 0.5 * step_size * g
        q = q + step_size * h / m
        try:
            u, g = potential_fn(q)
        except IllConditionedKernelError as exc:
            raise DivergentTrajectory(str(exc)) from exc
        if not (np.isfinite(u) and np.all(np.isfinite(g))):
            raise DivergentTrajectory("non-finite potential energy")
        h = h - 0.5 * step_size * g
    return ChainState(q, h, float(u), np.asarray(g, dtype=float))


def hmc_step(
    state: ChainState,
    potential_fn: PotentialFn,
    rng: np.random.Generator,
    step_size: float,
    n_steps: int,
    mass_diag=None,
    max_delta_h: float = 1000.0,
):
    """One momentum refresh, trajectory and Metropolis correction.

    Returns the next state (the current one on rejection) and a
    :class:`StepInfo`.
    """
    m = _mass(mass_diag, len(state.position))
    momentum = rng.standard_normal(len(m)) * np.sqrt(m)
    current = ChainState(state.position, momentum, state.potential, state.grad)
    h0 = hamiltonian(current, m)
    try:
        proposal = leapfrog(current, step_size, n_steps, m, potential_fn)
        delta_h = hamiltonian(proposal, m) - h0
        if not np.isfinite(delta_h) or abs(delta_h) > max_delta_h:
            raise DivergentTrajectory(f"energy error {delta_h}")
    except DivergentTrajectory:
        rng.uniform()  # keep the random stream aligned with non-divergent steps
        return state, StepInfo(False, 0.0, True, math.inf, n_steps)
    accept_prob = min(1.0, math.exp(-delta_h))
    accepted = rng.uniform() < accept_prob
    if accepted:
        return proposal, StepInfo(True, accept_prob, False, delta_h, n_steps)
    return state, StepInfo(False, accept_prob, False, delta_h, n_steps)


class _DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.m = 0
        self.h_bar = 0.0
        self.log_eps = math.log(step_size)
        self.log_eps_bar = 0.0

    def update(self, accept_prob):
        self.m += 1
        w = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.m) / self.gamma * self.h_bar
        eta = self.m ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


@dataclass
class Chain:
    """Raw output of :func:`sample`.

    ``positions`` are post-warmup draws in the sampled (unconstrained)
    coordinates.  When produced by :func:`run_chain`, ``params`` holds the
    matching full constrained vectors and ``log_posterior`` the constrained
    log posterior (no Jacobian).
    """

    names: tuple
    positions: np.ndarray
    accepted: np.ndarray
    log_density: np.ndarray
    step_size: float
    mass_diag: np.ndarray
    divergences: int
    warmup_divergences: int
    warmup_accept_rate: float
    divergent_draws: np.ndarray | None = None
    params: np.ndarray | None = None
    param_names: tuple = PARAM_NAMES
    log_posterior: np.ndarray | None = None

    @property
    def accept_rate(self):
        return float(np.mean(self.accepted)) if len(self.accepted) else float("nan")

    def summary(self) -> "PosteriorSummary":
        if self.params is not None:
            return summarize(self.params, self.param_names, self.accepted, self.divergences)
        return summarize(self.positions, self.names, self.accepted, self.divergences)


def _n_steps(cfg: HmcConfig, rng):
    if cfg.jitter_steps and cfg.leapfrog_steps > 1:
        return int(rng.integers(max(1, cfg.leapfrog_steps // 2), cfg.leapfrog_steps + 1))
    return cfg.leapfrog_steps


def sample(potential_fn: PotentialFn, init, cfg: HmcConfig, rng=None, names=None) -> Chain:
    """Run warmup and sampling for an arbitrary differentiable potential.

    Parameters
    ----------
    potential_fn : callable
        ``phi -> (U, dU/dphi)``.
    init : array_like
        Starting position.
    cfg : HmcConfig
        ``sampled_params`` is ignored here; the dimension comes from ``init``.
    rng : numpy.random.Generator, optional
        Defaults to ``default_rng(cfg.seed)``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    state = ChainState.at(init, potential_fn)
    if not np.isfinite(state.potential):
        raise InvalidInputError("potential is not finite at the initial position")
    d = len(state.position)
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(d))
    mass = _mass(cfg.mass_diag, d)
    eps = cfg.step_size

    # mass-matrix window: [15%, 75%) of warmup, step size adapted throughout
    window = (int(0.15 * cfg.n_warmup), int(0.75 * cfg.n_warmup))
    use_window = cfg.adapt_mass and window[1] - window[0] >= 10
    collected = []
    dual = _DualAveraging(eps, cfg.target_accept)
    w_div = 0
    w_acc = 0
    for it in range(cfg.n_warmup):
        state, info = hmc_step(state, potential_fn, rng, eps, _n_steps(cfg, rng), mass, cfg.max_delta_h)
        w_div += info.divergent
        w_acc += info.accepted
        if cfg.adapt_step_size:
            eps = dual.update(info.accept_prob)
        if use_window and window[0] <= it < window[1]:
            collected.append(state.position.copy())
            if it == window[1] - 1:
                x = np.asarray(collected)
                k = len(x)
                var = np.var(x, axis=0, ddof=1)
                var = (k / (k + 5.0)) * var + 1e-3 * (5.0 / (k + 5.0))
                mass = 1.0 / var
                if cfg.adapt_step_size:
                    dual = _DualAveraging(eps, cfg.target_accept)
                log.debug("warmup mass matrix set to %s", mass)
        if (it + 1) % 500 == 0:
            log.info("warmup %d/%d  step=%.3g  accept=%.2f", it + 1, cfg.n_warmup, eps, w_acc / (it + 1))
    if cfg.n_warmup and w_div == cfg.n_warmup:
        raise AdaptationError(
            f"all {cfg.n_warmup} warmup trajectories diverged (last step size {eps:.3g}); "
            "try a smaller --step-size or a better initial point"
        )
    if cfg.n_warmup and cfg.adapt_step_size:
        eps = dual.final

    positions = np.empty((cfg.n_samples, d))
    accepted = np.zeros(cfg.n_samples, dtype=bool)
    logp = np.empty(cfg.n_samples)
    divergent = np.zeros(cfg.n_samples, dtype=bool)
    for it in range(cfg.n_samples):
        state, info = hmc_step(state, potential_fn, rng, eps, _n_steps(cfg, rng), mass, cfg.max_delta_h)
        positions[it] = state.position
        accepted[it] = info.accepted
        logp[it] = -state.potential
        divergent[it] = info.divergent
        if (it + 1) % 1000 == 0:
            log.info("sample %d/%d  accept=%.2f", it + 1, cfg.n_samples, accepted[: it + 1].mean())
    return Chain(
        names=names,
        positions=positions,
        accepted=accepted,
        log_density=logp,
        step_size=eps,
        mass_diag=mass,
        divergences=int(divergent.sum()),
        warmup_divergences=w_div,
        warmup_accept_rate=w_acc / cfg.n_warmup if cfg.n_warmup else float("nan"),
        divergent_draws=divergent,
    )


def _target(obs, noise, priors, init, cfg):
    from .gp import LogPosterior

    init = np.asarray([init[n] for n in PARAM_NAMES] if isinstance(init, dict) else init, dtype=float)
    if init.shape != (len(PARAM_NAMES),) or np.any(~np.isfinite(init)) or np.any(init <= 0):
        raise InvalidInputError("init must give six strictly positive values")
    fixed = {n: float(v) for n, v in zip(PARAM_NAMES, init) if n not in cfg.sampled_params}
    return LogPosterior(obs, noise, priors, fixed), init


def run_chain(obs, noise, priors, init, cfg: HmcConfig, rng=None):
    """Sample the GP posterior of the PDE and kernel parameters.

    Parameters
    ----------
    obs, noise : Observations, NoiseModel
    priors : mapping of parameter name to Prior, or None
    init : sequence or dict
        Strictly positive starting values for all six parameters; the ones
        not listed in ``cfg.sampled_params`` stay fixed at these values.
    cfg : HmcConfig

    Returns
    -------
    summary : PosteriorSummary
    chain : Chain
    """
    cfg.validate()
    target, init = _target(obs, noise, priors, init, cfg)
    phi0 = target.unconstrained(init)
    chain = sample(target.potential, phi0, cfg, rng=rng, names=target.free_names)
    chain.params = np.array([target.constrained(p) for p in chain.positions])
    if np.any(chain.params <= 0):
        raise ArithmeticError("non-positive constrained sample")
    # drop the log-Jacobian so the trace reports the posterior of the parameters themselves
    chain.log_posterior = chain.log_density - chain.positions.sum(axis=1)
    return chain.summary(), chain


def _run_child(args):
    obs, noise, priors, init, cfg, seed_seq = args
    return run_chain(obs, noise, priors, init, cfg, rng=np.random.default_rng(seed_seq))[1]


def run_chains(obs, noise, priors, init, cfg: HmcConfig, n_chains: int = 1, max_workers=None):
    """Run independent chains in separate processes and pool their draws.

    Seeds are spawned from ``cfg.seed``; ``n_chains == 1`` reproduces
    :func:`run_chain` exactly.
    """
    if n_chains < 1:
        raise ConfigError("n_chains must be >= 1")
    if n_chains == 1:
        summary, chain = run_chain(obs, noise, priors, init, cfg)
        return summary, [chain]
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_chains)
    jobs = [(obs, noise, priors, init, cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        chains = list(pool.map(_run_child, jobs))
    params = np.concatenate([c.params for c in chains])
    accepted = np.concatenate([c.accepted for c in chains])
    summary = summarize(params, PARAM_NAMES, accepted, sum(c.divergences for c in chains))
    return summary, chains


@dataclass
class PosteriorSummary:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    corr: np.ndarray
    ess: np.ndarray
    degenerate: np.ndarray
    n_draws: int
    accept_rate: float = float("nan")
    divergences: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]

        return {
            "names": list(self.names),
            "mean": clean(self.mean),
            "sd": clean(self.sd),
            "ess": clean(self.ess),
            "degenerate": [bool(v) for v in self.degenerate],
            "corr": [clean(row) for row in self.corr],
            "n_draws": int(self.n_draws),
            "accept_rate": None if not np.isfinite(self.accept_rate) else float(self.accept_rate),
            "divergences": int(self.divergences),
        }

    def to_text(self):
        lines = [f"{'parameter':<10} {'mean':>14} {'sd':>14} {'ess':>10}"]
        for i, name in enumerate(self.names):
            lines.append(f"{name:<10} {self.mean[i]:>14.6g} {self.sd[i]:>14.6g} {self.ess[i]:>10.1f}")
        lines.append("")
        lines.append("correlation")
        lines.append(" " * 10 + "".join(f"{n:>10}" for n in self.names))
        for i, name in enumerate(self.names):
            lines.append(f"{name:<10}" + "".join(f"{c:>10.3f}" for c in self.corr[i]))
        lines.append("")
        lines.append(f"draws {self.n_draws}  accept_rate {self.accept_rate:.4f}  divergences {self.divergences}")
        return "\n".join(lines) + "\n"

    def __getitem__(self, name):
        i = list(self.names).index(name)
        return self.mean[i], self.sd[i]


def _autocorr(x):
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS of one trace via Geyer's initial positive sequence.

    Pairs of autocorrelations ``rho[2k] + rho[2k+1]`` are summed until the
    first non-positive pair; the pair sums are also forced monotone.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.ptp(x) == 0:
        return float("nan")
    rho = _autocorr(x)
    tau = -1.0
    prev = math.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += 2.0 * pair
    return n / max(tau, 1.0 / n)


def summarize(samples, names=None, accepted=None, divergences=0) -> PosteriorSummary:
    """Mean, sd, correlation and ESS of constrained-scale draws.

    Constant columns are flagged ``degenerate``; their correlations with
    everything else are reported as 0.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or len(x) == 0:
        raise InvalidInputError("cannot summarize an empty chain")
    n, p = x.shape
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(p))
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1) if n > 1 else np.zeros(p)
    degenerate = np.ptp(x, axis=0) == 0
    # constant columns (frozen parameters) are reported exactly, free of summation round-off
    mean[degenerate] = x[0, degenerate]
    sd[degenerate] = 0.0
    corr = np.eye(p)
    live = np.flatnonzero(~degenerate)
    if len(live) > 1 and n > 1:
        c = np.corrcoef(x[:, live], rowvar=False)
        corr[np.ix_(live, live)] = np.clip(0.5 * (c + c.T), -1.0, 1.0)
        np.fill_diagonal(corr, 1.0)
    ess = np.array([effective_sample_size(x[:, j]) for j in range(p)])
    accept_rate = float(np.mean(accepted)) if accepted is not None and len(accepted) else float("nan")
    return PosteriorSummary(
        names=names,
        mean=mean,
        sd=sd,
        corr=corr,
        ess=ess,
        degenerate=degenerate,
        n_draws=n,
        accept_rate=accept_rate,
        divergences=int(divergences),
    )


def with_overrides(cfg: HmcConfig, **changes) -> HmcConfig:
    """Copy of ``cfg`` with ``None``-valued overrides ignored."""
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})

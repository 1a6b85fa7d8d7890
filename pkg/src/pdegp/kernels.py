"""
Operator-derived covariance functions for the reaction-diffusion model

    -D y_xx + alpha y_t + beta y = f.

The latent field ``y`` has a separable squared-exponential prior

    k_yy(x, t, x', t') = s exp(-v^2 / (2 a^2) - u^2 / (2 b^2)),

with ``u = x - x'``, ``v = t - t'``, ``s = sigma_y2``, ``a = theta_t`` and
``b = theta_x``.  Because the operator ``L = -D d2/dx2 + alpha d/dt + beta`` is
linear, ``f = L y`` is jointly Gaussian with ``y`` and

    k_yf = L' k_yy      (operator on the second argument pair)
    k_fy = L  k_yy      (operator on the first argument pair)
    k_ff = L L' k_yy

Every block is ``s * P(u, v) * E(u, v)`` with ``E`` the unit RBF and ``P`` a
polynomial prefactor, which makes the derivatives with respect to all six
parameters cheap to write down in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "PARAM_NAMES",
    "PdeParams",
    "KernelHypers",
    "Point",
    "JointKernel",
    "pack_params",
    "unpack_params",
    "as_points",
    "kernel_matrix",
    "k_yy",
    "k_yf",
    "k_fy",
    "k_ff",
    "assemble_joint",
    "operator_apply_fd",
]

#: Canonical ordering of the inferred parameters (PDE first, then kernel).
PARAM_NAMES = ("D", "alpha", "beta", "sigma_y2", "theta_t", "theta_x")

KINDS = ("yy", "yf", "fy", "ff")


def _check_positive(obj, names):
    for name in names:
        value = getattr(obj, name)
        if not np.isfinite(value) or value <= 0:
            raise InvalidInputError(f"{type(obj).__name__}.{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class PdeParams:
    """Coefficients of ``-D y_xx + alpha y_t + beta y = f``; all strictly positive."""

    D: float
    alpha: float
    beta: float

    def __post_init__(self):
        _check_positive(self, ("D", "alpha", "beta"))


@dataclass(frozen=True)
class KernelHypers:
    """Signal variance and lengthscales of the base RBF kernel."""

    sigma_y2: float
    theta_t: float
    theta_x: float

    def __post_init__(self):
        _check_positive(self, ("sigma_y2", "theta_t", "theta_x"))


class Point(NamedTuple):
    x: float
    t: float


@dataclass
class JointKernel:
    """Joint covariance over stacked ``(Y, F)`` observation points.

    ``matrix`` has block layout ``[[K_yy, K_yf], [K_fy, K_ff]]``; ``grads`` is
    either empty or a ``(6, n, n)`` array with one matrix per entry of
    :data:`PARAM_NAMES`.
    """

    matrix: np.ndarray
    grads: list = field(default_factory=list)
    n_y: int = 0
    n_f: int = 0


def pack_params(theta: PdeParams, hypers: KernelHypers) -> np.ndarray:
    """Flatten parameters into a vector ordered as :data:`PARAM_NAMES`."""
    return np.array([theta.D, theta.alpha, theta.beta, hypers.sigma_y2, hypers.theta_t, hypers.theta_x])


def unpack_params(vec) -> tuple[PdeParams, KernelHypers]:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (len(PARAM_NAMES),):
        raise InvalidInputError(f"expected a parameter vector of length {len(PARAM_NAMES)}, got shape {vec.shape}")
    return PdeParams(*vec[:3]), KernelHypers(*vec[3:])


def as_points(points) -> np.ndarray:
    """Coerce a sequence of ``(x, t)`` pairs to a finite ``(n, 2)`` float array."""
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"points must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("point coordinates must be finite")
    return arr


def _prefactors(u, v, kind, theta: PdeParams, hypers: KernelHypers, with_grads: bool):
    """Polynomial prefactor ``P`` for one block, plus its parameter derivatives.

    Returns ``(E, P, dP)`` where ``dP`` maps parameter name to the derivative
    of the *full* block divided by ``s`` (so it already includes the chain
    rule through ``E`` for the lengthscales).
    """
    D, al, be = np.float64(theta.D), np.float64(theta.alpha), np.float64(theta.beta)
    a, b = np.float64(hypers.theta_t), np.float64(hypers.theta_x)
    u2 = u * u
    v2 = v * v
    E = np.exp(-0.5 * v2 / a**2 - 0.5 * u2 / b**2)

    if kind == "yy":
        P = np.ones_like(E)
    else:
        A = u2 / b**4 - 1.0 / b**2
        if kind == "yf":
            P = -D * A + al * v / a**2 + be
        elif kind == "fy":
            P = -D * A - al * v / a**2 + be
        elif kind == "ff":
            B = 1.0 / a**2 - v2 / a**4
            C = 3.0 / b**4 - 6.0 * u2 / b**6 + u2 * u2 / b**8
            P = al**2 * B - 2.0 * D * be * A + D**2 * C + be**2
        else:
            raise InvalidInputError(f"unknown kernel block {kind!r}; expected one of {KINDS}")
    if not with_grads:
        return E, P, None

    zero = np.zeros_like(E)
    # d(E)/da = E v^2/a^3, d(E)/db = E u^2/b^3
    ea = v2 / a**3
    eb = u2 / b**3
    if kind == "yy":
        dD, dal, dbe, dPa, dPb = zero, zero, zero, zero, zero
    else:
        dA_db = -4.0 * u2 / b**5 + 2.0 / b**3
        if kind in ("yf", "fy"):
            sign = 1.0 if kind == "yf" else -1.0
            dD = -A
            dal = sign * v / a**2
            dbe = np.ones_like(E)
            dPa = -sign * 2.0 * al * v / a**3
            dPb = -D * dA_db
        else:
            dB_da = -2.0 / a**3 + 4.0 * v2 / a**5
            dC_db = -12.0 / b**5 + 36.0 * u2 / b**7 - 8.0 * u2 * u2 / b**9
            dD = -2.0 * be * A + 2.0 * D * C
            dal = 2.0 * al * B
            dbe = -2.0 * D * A + 2.0 * be
            dPa = al**2 * dB_da
            dPb = -2.0 * D * be * dA_db + D**2 * dC_db
    dP = {
        "D": dD,
        "alpha": dal,
        "beta": dbe,
        "theta_t": dPa + P * ea,
        "theta_x": dPb + P * eb,
    }
    return E, P, dP


def _block(pa: np.ndarray, pb: np.ndarray, kind, hypers, theta, with_grads=False):
    u = pa[:, None, 0] - pb[None, :, 0]
    v = pa[:, None, 1] - pb[None, :, 1]
    E, P, dP = _prefactors(u, v, kind, theta, hypers, with_grads)
    s = hypers.sigma_y2
    value = s * P * E
    if not with_grads:
        return value, None
    grads = []
    for name in PARAM_NAMES:
        if name == "sigma_y2":
            grads.append(P * E)
        else:
            grads.append(s * dP[name] * E)
    return value, grads


def kernel_matrix(pa, pb, kind: str, hypers: KernelHypers, theta: PdeParams | None = None) -> np.ndarray:
    """Covariance block between two point sets.

    Parameters
    ----------
    pa, pb : array_like, shape (n, 2) and (m, 2)
        Points as ``(x, t)`` rows.
    kind : {'yy', 'yf', 'fy', 'ff'}
        Channel of the first and second argument respectively.
    hypers : KernelHypers
    theta : PdeParams, optional
        Required unless ``kind == 'yy'``.

    Returns
    -------
    ndarray, shape (n, m)
    """
    if kind != "yy" and theta is None:
        raise InvalidInputError(f"kernel block {kind!r} needs PDE parameters")
    if theta is None:
        theta = PdeParams(1.0, 1.0, 1.0)
    value, _ = _block(as_points(pa), as_points(pb), kind, hypers, theta)
    return value


def _scalar(kind, p, q, hypers, theta):
    return float(kernel_matrix([p], [q], kind, hypers, theta)[0, 0])


def k_yy(p, q, hypers: KernelHypers) -> float:
    """Base RBF covariance between latent values at ``p`` and ``q``."""
    return _scalar("yy", p, q, hypers, None)


def k_yf(p, q, hypers: KernelHypers, theta: PdeParams) -> float:
    """Covariance of ``y(p)`` with ``f(q)``."""
    return _scalar("yf", p, q, hypers, theta)


def k_fy(p, q, hypers: KernelHypers, theta: PdeParams) -> float:
    """Covariance of ``f(p)`` with ``y(q)``; equals ``k_yf(q, p)``."""
    return _scalar("fy", p, q, hypers, theta)


def k_ff(p, q, hypers: KernelHypers, theta: PdeParams) -> float:
    """Covariance of the forcing ``f`` at ``p`` and ``q``."""
    return _scalar("ff", p, q, hypers, theta)


def assemble_joint(points_y, points_f, hypers: KernelHypers, theta: PdeParams, with_grads: bool = False) -> JointKernel:
    """Build the joint covariance over Y points followed by F points.

    Parameters
    ----------
    points_y, points_f : array_like, shape (n_y, 2) and (n_f, 2)
        Observation locations of each channel; either may be empty.
    hypers, theta :
        Kernel hyperparameters and PDE coefficients.
    with_grads : bool
        Also return the six derivative matrices, ordered as :data:`PARAM_NAMES`.

    Returns
    -------
    JointKernel
    """
    py = as_points(points_y)
    pf = as_points(points_f)
    ny, nf = len(py), len(pf)
    n = ny + nf
    if n == 0:
        raise InvalidInputError("cannot assemble a kernel over zero points")

    # The diagonal blocks depend on u, v only through u^2, v^2 and are
    # therefore exactly symmetric; the lower-left block is the transpose of
    # the upper-right one by construction.
    kyy, gyy = _block(py, py, "yy", hypers, theta, with_grads)
    kyf, gyf = _block(py, pf, "yf", hypers, theta, with_grads)
    kff, gff = _block(pf, pf, "ff", hypers, theta, with_grads)

    def fill(out, yy, yf, ff):
        out[:ny, :ny] = yy
        out[:ny, ny:] = yf
        out[ny:, :ny] = yf.T
        out[ny:, ny:] = ff
        return out

    matrix = fill(np.empty((n, n)), kyy, kyf, kff)
    grads = []
    if with_grads:
        stacked = np.empty((len(PARAM_NAMES), n, n))
        for i in range(len(PARAM_NAMES)):
            fill(stacked[i], gyy[i], gyf[i], gff[i])
        grads = stacked
    return JointKernel(matrix=matrix, grads=grads, n_y=ny, n_f=nf)


def operator_apply_fd(
    g: Callable[[float, float], float],
    p,
    theta: PdeParams,
    step: float | Sequence[float],
    richardson: bool = True,
) -> float:
    """Apply ``-D d2/dx2 + alpha d/dt + beta`` to ``g`` at ``p`` by central differences.

    ``step`` is either one spacing for both axes or an ``(step_x, step_t)``
    pair.  With ``richardson`` the O(h^2) stencils are combined at ``h`` and
    ``h/2`` to cancel the leading truncation term.
    """
    sx, st = (float(step), float(step)) if np.ndim(step) == 0 else (float(step[0]), float(step[1]))
    if sx <= 0 or st <= 0:
        raise InvalidInputError("finite-difference step must be positive")
    x, t = float(p[0]), float(p[1])
    g0 = g(x, t)

    def stencil(hx, ht):
        d2x = (g(x + hx, t) - 2.0 * g0 + g(x - hx, t)) / hx**2
        dt = (g(x, t + ht) - g(x, t - ht)) / (2.0 * ht)
        return -theta.D * d2x + theta.alpha * dt

    diff = stencil(sx, st)
    if richardson:
        diff = (4.0 * stencil(sx / 2, st / 2) - diff) / 3.0
    return diff + theta.beta * g0

"""Independent priors on the positive (constrained) parameter scale.

Each prior exposes ``log_pdf`` and its derivative ``dlog_pdf`` with respect to
the constrained value.  Priors are written as short strings on the command
line and in config files, e.g. ``lognormal(0,1)``, ``gamma(2,0.5)``, ``flat``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from scipy.special import gammaln

from .errors import ConfigError, InvalidInputError

__all__ = ["Prior", "Flat", "LogUniform", "LogNormal", "Gamma", "parse_prior"]

_LOG_2PI = math.log(2.0 * math.pi)


def _positive(value):
    if not value > 0 or not math.isfinite(value):
        raise InvalidInputError(f"prior evaluated at non-positive value {value!r}")
    return value


class Prior:
    def log_pdf(self, value: float) -> float:
        raise NotImplementedError

    def dlog_pdf(self, value: float) -> float:
        raise NotImplementedError

    def to_spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Flat(Prior):
    """Improper constant density on ``(0, inf)``.

    In log coordinates the sampled target then carries only the Jacobian term.
    """

    def log_pdf(self, value):
        _positive(value)
        return 0.0

    def dlog_pdf(self, value):
        _positive(value)
        return 0.0

    def to_spec(self):
        return "flat"


@dataclass(frozen=True)
class LogUniform(Prior):
    """Improper ``1/value`` density, i.e. uniform in ``log(value)``."""

    def log_pdf(self, value):
        return -math.log(_positive(value))

    def dlog_pdf(self, value):
        return -1.0 / _positive(value)

    def to_spec(self):
        return "loguniform"


@dataclass(frozen=True)
class LogNormal(Prior):
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError("lognormal sigma must be > 0")

    def log_pdf(self, value):
        z = (math.log(_positive(value)) - self.mu) / self.sigma
        return -math.log(value) - math.log(self.sigma) - 0.5 * _LOG_2PI - 0.5 * z * z

    def dlog_pdf(self, value):
        z = (math.log(_positive(value)) - self.mu) / self.sigma
        return -(1.0 + z / self.sigma) / value

    def to_spec(self):
        return f"lognormal({self.mu!r},{self.sigma!r})"


@dataclass(frozen=True)
class Gamma(Prior):
    """Gamma density with shape ``k`` and rate ``r``."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise InvalidInputError("gamma shape and rate must be > 0")

    def log_pdf(self, value):
        _positive(value)
        k, r = self.shape, self.rate
        return k * math.log(r) - gammaln(k) + (k - 1.0) * math.log(value) - r * value

    def dlog_pdf(self, value):
        return (self.shape - 1.0) / _positive(value) - self.rate

    def to_spec(self):
        return f"gamma({self.shape!r},{self.rate!r})"


_SPEC = re.compile(r"^\s*([a-z_-]+)\s*(?:\(([^)]*)\))?\s*$", re.IGNORECASE)


def parse_prior(spec: str) -> Prior:
    """Parse ``'flat'``, ``'loguniform'``, ``'lognormal(mu,sigma)'`` or ``'gamma(shape,rate)'``."""
    m = _SPEC.match(spec)
    if not m:
        raise ConfigError(f"cannot parse prior spec {spec!r}")
    family = m.group(1).lower().replace("-", "").replace("_", "")
    args = []
    if m.group(2):
        try:
            args = [float(a) for a in m.group(2).split(",")]
        except ValueError:
            raise ConfigError(f"non-numeric prior argument in {spec!r}") from None
    table = {"flat": (Flat, 0), "loguniform": (LogUniform, 0), "lognormal": (LogNormal, 2), "gamma": (Gamma, 2)}
    if family not in table:
        raise ConfigError(f"unknown prior family {m.group(1)!r}; expected one of {sorted(table)}")
    cls, nargs = table[family]
    if len(args) != nargs:
        raise ConfigError(f"prior {family} takes {nargs} arguments, got {len(args)}")
    try:
        return cls(*args)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None

"""Environment laws and law-level quantities for 1-d random walks in random
environment.

A law describes one site probability ``w`` in (0,1); sites are i.i.d. The walk
steps right from site x with probability ``w_x`` and left with ``1 - w_x``.
The odds ratio ``rho = (1 - w)/w`` controls everything at the law level:

* ``E[log rho] < 0``  -- the walk is transient to the right;
* ``r_p = E[rho^p]``  -- the moment curve of rho;
* ``kappa = sup{p > 0 : r_p < 1}`` -- the tail exponent that selects which
  convergence-rate regime applies (thresholds at 2, 12/5, 3 and 4).

Four parametric laws are supported (two-point, beta, uniform-on-an-interval,
degenerate), each with closed-form ``r_p`` and ``E[log rho]`` where available
and adaptive quadrature otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import betaincinv, digamma, gammaln

from .errors import ParameterError, RangeError, RegimeError
from .rng import site_uniforms

__all__ = [
    "EnvDistribution",
    "TwoPoint",
    "Beta",
    "UniformInterval",
    "Degenerate",
    "EnvironmentWindow",
    "RegimeReport",
    "sample_environment",
    "solve_kappa",
    "classify_regime",
    "regime_report",
    "distribution_from_config",
    "distribution_from_shorthand",
]

_QUAD_RTOL = 1e-10

# Regime tags, keyed by the kappa thresholds of the rate theorems.
TAG_NONE = "none"
TAG_TN_FAST = "BETn_fast"
TAG_TN_SLOW = "BETn_slow"
TAG_TNDS_FAST = "BETnds_fast"
TAG_TNDS_SLOW = "BETnds_slow"
TAG_XN_AS = "BEXn_as"
TAG_XN_IP_FAST = "BEXn_ip_fast"
TAG_XN_IP_SLOW = "BEXn_ip_slow"


def _check_prob(name, value):
    if not (0.0 < value < 1.0):
        raise ParameterError(f"{name} must lie strictly inside (0, 1), got {value!r}")


class EnvDistribution:
    """Base class for site-probability laws.

    Subclasses provide ``quantile`` (inverse CDF, used for counter-based
    sampling), ``moment_rho`` and ``log_rho_mean`` (closed form where one
    exists), and ``pdf`` when the law has a density (used by the quadrature
    cross-check ``moment_rho_quadrature``).
    """

    name = "abstract"

    def quantile(self, u):
        raise NotImplementedError

    def moment_rho(self, p):
        """E[rho^p] as a float, ``inf`` when the moment diverges."""
        raise NotImplementedError

    def log_rho_mean(self):
        """E[log rho]."""
        raise NotImplementedError

    def pdf(self, w):
        raise NotImplementedError(f"{self.name} law has no density")

    def has_density(self):
        try:
            self.pdf(0.5)
        except NotImplementedError:
            return False
        return True

    def moment_rho_quadrature(self, p):
        """E[rho^p] by adaptive quadrature against the density.

        The integrand ((1-w)/w)^p * pdf(w) is singular at the endpoints for
        heavy-tailed laws, so the integral is split at 1/2 and each half is
        handled by the adaptive rule with its singular endpoint exposed.
        """
        if p < 0:
            raise ParameterError("moment order p must be nonnegative")
        if p == 0:
            return 1.0

        def integrand(w):
            return ((1.0 - w) / w) ** p * self.pdf(w)

        lo, err_lo = integrate.quad(integrand, 0.0, 0.5, epsabs=0.0,
                                    epsrel=_QUAD_RTOL, limit=300)
        hi, err_hi = integrate.quad(integrand, 0.5, 1.0, epsabs=0.0,
                                    epsrel=_QUAD_RTOL, limit=300)
        total = lo + hi
        if not math.isfinite(total) or (total > 0 and (err_lo + err_hi) / total > 1e-6):
            return math.inf
        return total

    def log_rho_mean_quadrature(self):
        def integrand(w):
            return (math.log1p(-w) - math.log(w)) * self.pdf(w)

        lo, _ = integrate.quad(integrand, 0.0, 0.5, epsabs=0.0,
                               epsrel=_QUAD_RTOL, limit=300)
        hi, _ = integrate.quad(integrand, 0.5, 1.0, epsabs=0.0,
                               epsrel=_QUAD_RTOL, limit=300)
        return lo + hi

    def params(self):
        raise NotImplementedError

    def label(self):
        inner = ",".join(f"{v:g}" for v in self.params().values())
        return f"{self.name}:{inner}"

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


@dataclass(frozen=True, repr=False)
class TwoPoint(EnvDistribution):
    """Two-point law: ``w = a`` with probability ``q``, else ``w = b``."""

    a: float
    b: float
    q: float
    name = "two_point"

    def __post_init__(self):
        _check_prob("a", self.a)
        _check_prob("b", self.b)
        _check_prob("q", self.q)

    def quantile(self, u):
        return np.where(np.asarray(u) < self.q, self.a, self.b)

    def moment_rho(self, p):
        if p < 0:
            raise ParameterError("moment order p must be nonnegative")
        rho_a = (1.0 - self.a) / self.a
        rho_b = (1.0 - self.b) / self.b
        return self.q * rho_a**p + (1.0 - self.q) * rho_b**p

    def log_rho_mean(self):
        rho_a = (1.0 - self.a) / self.a
        rho_b = (1.0 - self.b) / self.b
        return self.q * math.log(rho_a) + (1.0 - self.q) * math.log(rho_b)

    def params(self):
        return {"a": self.a, "b": self.b, "q": self.q}


@dataclass(frozen=True, repr=False)
class Beta(EnvDistribution):
    """Beta(alpha, beta) law on the site probability.

    ``r_p`` has the closed form B(alpha - p, beta + p) / B(alpha, beta) for
    p < alpha and diverges at p >= alpha, so the tail exponent is exactly
    ``alpha - beta`` whenever that is positive.
    """

    alpha: float
    beta: float
    name = "beta"

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ParameterError("beta law needs alpha > 0 and beta > 0")

    def quantile(self, u):
        return betaincinv(self.alpha, self.beta, np.asarray(u, dtype=np.float64))

    def moment_rho(self, p):
        if p < 0:
            raise ParameterError("moment order p must be nonnegative")
        if p >= self.alpha:
            return math.inf
        return math.exp(
            gammaln(self.alpha - p) + gammaln(self.beta + p)
            - gammaln(self.alpha) - gammaln(self.beta)
        )

    def log_rho_mean(self):
        return float(digamma(self.beta) - digamma(self.alpha))

    def pdf(self, w):
        log_norm = gammaln(self.alpha + self.beta) - gammaln(self.alpha) - gammaln(self.beta)
        return math.exp(log_norm + (self.alpha - 1) * math.log(w)
                        + (self.beta - 1) * math.log1p(-w))

    def params(self):
        return {"alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True, repr=False)
class UniformInterval(EnvDistribution):
    """Uniform law on (lo, hi) with 0 < lo < hi < 1."""

    lo: float
    hi: float
    name = "uniform"

    def __post_init__(self):
        _check_prob("lo", self.lo)
        _check_prob("hi", self.hi)
        if not self.lo < self.hi:
            raise ParameterError("uniform law needs lo < hi")

    def quantile(self, u):
        return self.lo + np.asarray(u, dtype=np.float64) * (self.hi - self.lo)

    def moment_rho(self, p):
        if p < 0:
            raise ParameterError("moment order p must be nonnegative")
        if p == 0:
            return 1.0
        if p == 1:
            return (math.log(self.hi / self.lo)) / (self.hi - self.lo) - 1.0
        return self.moment_rho_quadrature(p)

    def log_rho_mean(self):
        # antiderivative of log((1-w)/w) is -(1-w)log(1-w) - w log(w)
        def anti(w):
            return -(1.0 - w) * math.log1p(-w) - w * math.log(w)

        return (anti(self.hi) - anti(self.lo)) / (self.hi - self.lo)

    def pdf(self, w):
        return 1.0 / (self.hi - self.lo) if self.lo < w < self.hi else 0.0

    def params(self):
        return {"lo": self.lo, "hi": self.hi}


@dataclass(frozen=True, repr=False)
class Degenerate(EnvDistribution):
    """Deterministic law: every site has the same probability ``p``."""

    p: float
    name = "degenerate"

    def __post_init__(self):
        _check_prob("p", self.p)

    def quantile(self, u):
        return np.full(np.shape(u), self.p, dtype=np.float64)

    def moment_rho(self, p):
        if p < 0:
            raise ParameterError("moment order p must be nonnegative")
        rho = (1.0 - self.p) / self.p
        return rho**p

    def log_rho_mean(self):
        return math.log((1.0 - self.p) / self.p)

    def params(self):
        return {"p": self.p}


@dataclass
class EnvironmentWindow:
    """A sampled slice ``{w_x : left_index <= x <= right_index}`` of the line.

    Regenerating with the same (law, seed) reproduces sites bit-for-bit, and a
    site's value depends only on (seed, x), so extending the window in either
    direction keeps previously sampled sites fixed.
    """

    left_index: int
    values: np.ndarray
    seed: int
    rho: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ParameterError("window values must be a nonempty 1-d array")
        if not ((self.values > 0.0) & (self.values < 1.0)).all():
            raise ParameterError("all site probabilities must lie in (0, 1)")
        self.rho = (1.0 - self.values) / self.values

    @property
    def right_index(self):
        return self.left_index + self.values.size - 1

    def __len__(self):
        return self.values.size

    def _pos(self, x):
        if not self.left_index <= x <= self.right_index:
            raise RangeError(
                f"site {x} outside sampled window [{self.left_index}, {self.right_index}]"
            )
        return x - self.left_index

    def omega(self, x):
        """Site probability w_x."""
        return float(self.values[self._pos(x)])

    def omega_slice(self, lo, hi):
        """Array of w_x for x = lo..hi inclusive."""
        if lo > hi:
            raise ParameterError("empty site range")
        self._pos(lo)
        self._pos(hi)
        return self.values[lo - self.left_index: hi - self.left_index + 1]

    def rho_slice(self, lo, hi):
        """Array of rho_x for x = lo..hi inclusive."""
        if lo > hi:
            raise ParameterError("empty site range")
        self._pos(lo)
        self._pos(hi)
        return self.rho[lo - self.left_index: hi - self.left_index + 1]


def sample_environment(dist, left, right, seed):
    """Sample an i.i.d. environment window over sites ``left..right``.

    Deterministic given (dist, left, right, seed); each site is drawn by
    inverse-CDF transform of a counter-hashed uniform, so overlapping windows
    under the same seed agree exactly.
    """
    if left > right:
        raise ParameterError(f"need left <= right, got [{left}, {right}]")
    sites = np.arange(left, right + 1, dtype=np.int64)
    u = site_uniforms(seed, sites)
    values = dist.quantile(u)
    return EnvironmentWindow(left_index=int(left), values=values, seed=int(seed))


def solve_kappa(dist, tol=1e-9):
    """Tail exponent ``sup{p > 0 : E[rho^p] < 1}`` by bisection.

    Returns ``inf`` when the moment curve stays below 1 up to p = 512 (the
    bounded-rho case).  Raises :class:`RegimeError` unless E[log rho] < 0.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if dist.log_rho_mean() >= 0:
        raise RegimeError(
            "kappa is defined only for laws transient to the right (E[log rho] < 0)"
        )
    hi = 64.0
    while dist.moment_rho(hi) < 1.0:
        hi *= 2.0
        if hi > 512.0:
            return math.inf
    lo = tol
    if dist.moment_rho(lo) >= 1.0:
        raise RegimeError("moment curve reaches 1 immediately; no positive root")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dist.moment_rho(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def classify_regime(kappa):
    """Applicable rate-theorem tags for a tail exponent ``kappa``."""
    if kappa <= 2.0:
        return [TAG_NONE]
    tags = [TAG_TN_FAST if kappa > 3.0 else TAG_TN_SLOW]
    tags.append(TAG_TNDS_FAST if kappa > 4.0 else TAG_TNDS_SLOW)
    tags.append(TAG_XN_AS)
    tags.append(TAG_XN_IP_FAST if kappa >= 2.4 else TAG_XN_IP_SLOW)
    return tags


@dataclass(frozen=True)
class RegimeReport:
    """Law-level summary: tail exponent, first two rho-moments, drift sign,
    and the rate-theorem tags consistent with the stored kappa."""

    kappa: float
    r1: float
    r2: float
    log_rho_mean: float
    tags: tuple

    def to_json_dict(self):
        kappa = "inf" if math.isinf(self.kappa) else self.kappa
        return {
            "kappa": kappa,
            "r1": self.r1,
            "r2": self.r2,
            "log_rho_mean": self.log_rho_mean,
            "tags": list(self.tags),
        }


def regime_report(dist, tol=1e-9):
    """Build the :class:`RegimeReport` for a law (solves for kappa)."""
    kappa = solve_kappa(dist, tol=tol)
    return RegimeReport(
        kappa=kappa,
        r1=dist.moment_rho(1.0),
        r2=dist.moment_rho(2.0),
        log_rho_mean=dist.log_rho_mean(),
        tags=tuple(classify_regime(kappa)),
    )


_LAW_FIELDS = {
    "beta": ("alpha", "beta"),
    "two_point": ("a", "b", "q"),
    "twopoint": ("a", "b", "q"),
    "uniform": ("lo", "hi"),
    "degenerate": ("p",),
}


def distribution_from_config(table):
    """Build a law from a config mapping, e.g. ``{"law": "beta", "alpha": 5, "beta": 1}``."""
    if "law" not in table:
        raise ParameterError("environment config needs a 'law' key")
    law = str(table["law"]).lower()
    if law not in _LAW_FIELDS:
        raise ParameterError(f"unknown law {law!r}; expected one of "
                             f"{sorted(set(_LAW_FIELDS) - {'twopoint'})}")
    names = _LAW_FIELDS[law]
    try:
        args = [float(table[name]) for name in names]
    except KeyError as missing:
        raise ParameterError(f"law {law!r} needs parameter {missing.args[0]!r}") from None
    return _construct(law, args)


def distribution_from_shorthand(text):
    """Build a law from CLI shorthand, e.g. ``beta:7,1`` or ``degenerate:0.667``."""
    law, _, rest = text.partition(":")
    law = law.strip().lower()
    if law not in _LAW_FIELDS:
        raise ParameterError(f"unknown law {law!r} in shorthand {text!r}")
    parts = [p for p in rest.split(",") if p.strip()]
    names = _LAW_FIELDS[law]
    if len(parts) != len(names):
        raise ParameterError(
            f"law {law!r} takes {len(names)} parameters {names}, got {len(parts)}"
        )
    try:
        args = [float(p) for p in parts]
    except ValueError:
        raise ParameterError(f"non-numeric parameter in shorthand {text!r}") from None
    return _construct(law, args)


def _construct(law, args):
    if law == "beta":
        return Beta(*args)
    if law in ("two_point", "twopoint"):
        return TwoPoint(*args)
    if law == "uniform":
        return UniformInterval(*args)
    return Degenerate(*args)

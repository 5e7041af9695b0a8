"""Per-site quenched moments of crossing times, their prefix sums, and the
law-level constants they average to.

For a fixed environment, the time tau to step from site k to k+1 (started at
k) has quenched moments that satisfy first-order recursions in k driven by
rho_k = (1 - w_k)/w_k:

    mu_k  = 1 + rho_k (1 + mu_{k-1})
    m2_k  = (1+rho_k)(1+2 rho_k) + 4 rho_k (1+rho_k) mu_{k-1}
            + 2 rho_k^2 mu_{k-1}^2 + rho_k m2_{k-1}
    m3_k  = 1 + rho_k S_k + rho_k m3_{k-1}      (S_k: trinomial cross terms)
    V_k   = m2_k - mu_k^2
          = rho_k (1+rho_k)(1+mu_{k-1})^2 + rho_k V_{k-1}   (equivalent route)

On the infinite line these quantities involve the whole environment to the
left, so tables are computed on a window whose leftmost site ``trunc_left``
is made perfectly reflecting (w = 1): the crossing time there is exactly one
step, giving the initial values mu = m2 = m3 = 1, V = 0.  Reflection can only
*reduce* the moments, the error decays geometrically in the reflection depth,
and every table carries a bound on it.

Prefix sums give the quenched mean and variance of the hitting time of site
n, E_w[T_n] = sum_{k<n} mu_k and Var_w(T_n) = sum_{k<n} V_k, plus the random
centering Z_n used by the position-level normal approximation.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .environments import EnvironmentWindow
from .errors import ParameterError, RangeError, RegimeError
from .rng import column_uniforms, series_row_keys

__all__ = [
    "QuenchedMomentTable",
    "LawConstants",
    "moment_tables",
    "law_constants",
    "centering_Zn",
    "truncation_control",
    "third_moment_series",
    "stationary_moment_series",
    "ensemble_site_moments",
]

# Test hook (documented mutation canary): setting this environment variable
# flips a sign in the *recursion* route for V_k so that two-route agreement
# checks must fail.  The production route (m2 - mu^2) is unaffected.
FAULT_ENV_VAR = "RWRE_FLIP_VAR_RECURSION_SIGN"


@dataclass
class QuenchedMomentTable:
    """Per-site crossing-time moments over ``first_site..last_site``.

    Arrays are indexed so that entry 0 corresponds to ``first_site``.  The
    recursion itself starts further left, at the reflecting site
    ``trunc_left``; sites between the two are run but not reported, and
    ``trunc_error_bound`` estimates how much any reported entry could still
    move if the reflection were pushed further left.
    """

    env: EnvironmentWindow
    first_site: int
    last_site: int
    trunc_left: int
    mu: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    var: np.ndarray
    trunc_error_bound: float
    prefix_mean: np.ndarray | None = field(default=None, repr=False)
    prefix_var: np.ndarray | None = field(default=None, repr=False)

    def _idx(self, k):
        if not self.first_site <= k <= self.last_site:
            raise RangeError(
                f"site {k} outside table range [{self.first_site}, {self.last_site}]"
            )
        return k - self.first_site

    def mu_at(self, k):
        return float(self.mu[self._idx(k)])

    def m2_at(self, k):
        return float(self.m2[self._idx(k)])

    def m3_at(self, k):
        return float(self.m3[self._idx(k)])

    def var_at(self, k):
        return float(self.var[self._idx(k)])

    @property
    def n_max(self):
        """Largest n for which the prefix sums E_w[T_n], Var_w(T_n) exist."""
        return self.last_site + 1 if self.prefix_mean is not None else 0

    def mean_T(self, n):
        """E_w[T_n] = sum of mu over sites 0..n-1."""
        self._check_prefix(n)
        return float(self.prefix_mean[n])

    def var_T(self, n):
        """Var_w(T_n) = sum of V over sites 0..n-1."""
        self._check_prefix(n)
        return float(self.prefix_var[n])

    def _check_prefix(self, n):
        if self.prefix_mean is None:
            raise RangeError("prefix sums need a table that starts at site <= 0")
        if not 0 <= n <= self.last_site + 1:
            raise RangeError(f"n={n} outside prefix range [0, {self.last_site + 1}]")

    def var_via_recursion(self):
        """V_k recomputed through the variance recursion (not the subtraction
        route); used by two-route agreement checks."""
        sign = -1.0 if os.environ.get(FAULT_ENV_VAR) else 1.0
        rho = self.env.rho_slice(self.trunc_left + 1, self.last_site)
        mu_prev, v_prev = 1.0, 0.0
        out = np.empty(self.last_site - self.first_site + 1)
        for offset, r in enumerate(rho.tolist()):
            k = self.trunc_left + 1 + offset
            mu_c = 1.0 + r * (1.0 + mu_prev)
            v_c = r * (1.0 + r) * (1.0 + mu_prev) ** 2 + sign * r * v_prev
            if k >= self.first_site:
                out[k - self.first_site] = v_c
            mu_prev, v_prev = mu_c, v_c
        return out

    def two_route_var_residual(self):
        """Max relative discrepancy between the two V_k routes."""
        rec = self.var_via_recursion()
        denom = np.maximum(np.maximum(np.abs(rec), np.abs(self.var)), 1.0)
        return float(np.max(np.abs(rec - self.var) / denom))

    def to_csv(self, path):
        """Write columns k, mu, m2, m3, var."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "mu", "m2", "m3", "var"])
            for i in range(self.mu.size):
                writer.writerow([
                    self.first_site + i,
                    repr(float(self.mu[i])),
                    repr(float(self.m2[i])),
                    repr(float(self.m3[i])),
                    repr(float(self.var[i])),
                ])

    def prefix_to_csv(self, path, speed):
        """Write columns n, mean_Tn, var_Tn, Zn (Zn uses the given speed)."""
        self._check_prefix(0)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "mean_Tn", "var_Tn", "Zn"])
            for n in range(self.n_max + 1):
                target = math.floor(n * speed)
                zn = centering_Zn(self, n, speed) if target <= self.n_max else ""
                writer.writerow([
                    n,
                    repr(float(self.prefix_mean[n])),
                    repr(float(self.prefix_var[n])),
                    repr(float(zn)) if zn != "" else "",
                ])


def moment_tables(env, last_site, first_site=0, trunc_left=None):
    """Run the moment recursions over a window.

    Parameters
    ----------
    env : EnvironmentWindow
        Sampled environment; must cover ``trunc_left..last_site``.
    last_site : int
        Rightmost site of the table.
    first_site : int
        Leftmost *reported* site (default 0; use -1 when martingale checks
        need the site just left of the origin).
    trunc_left : int, optional
        Reflecting site; defaults to the left edge of the window.

    Returns
    -------
    QuenchedMomentTable with prefix sums attached when ``first_site <= 0``.
    """
    if trunc_left is None:
        trunc_left = env.left_index
    if trunc_left < env.left_index:
        raise RangeError(
            f"reflection site {trunc_left} is left of the window ({env.left_index})"
        )
    if not trunc_left < first_site <= last_site:
        raise RangeError(
            f"need trunc_left < first_site <= last_site, got "
            f"{trunc_left}, {first_site}, {last_site}"
        )
    if last_site > env.right_index:
        raise RangeError(
            f"last_site {last_site} is right of the window ({env.right_index})"
        )

    size = last_site - first_site + 1
    mu = np.empty(size)
    m2 = np.empty(size)
    m3 = np.empty(size)
    var = np.empty(size)

    rho = env.rho_slice(trunc_left + 1, last_site).tolist()
    mu_p, m2_p, m3_p = 1.0, 1.0, 1.0
    base = first_site - (trunc_left + 1)
    for offset, r in enumerate(rho):
        one_plus = 1.0 + r
        mu_c = 1.0 + r * (1.0 + mu_p)
        m2_c = (one_plus * (1.0 + 2.0 * r)
                + 4.0 * r * one_plus * mu_p
                + 2.0 * r * r * mu_p * mu_p
                + r * m2_p)
        s = (1.0 + 3.0 * mu_c + 3.0 * m2_c + 3.0 * mu_p
             + 6.0 * mu_p * mu_c + 3.0 * mu_p * m2_c
             + 3.0 * m2_p + 3.0 * m2_p * mu_c)
        m3_c = 1.0 + r * s + r * m3_p
        if offset >= base:
            i = offset - base
            mu[i] = mu_c
            m2[i] = m2_c
            m3[i] = m3_c
            var[i] = m2_c - mu_c * mu_c
        mu_p, m2_p, m3_p = mu_c, m2_c, m3_c

    bound = _truncation_error_bound(env, trunc_left, first_site, last_site, m3)

    prefix_mean = prefix_var = None
    if first_site <= 0:
        zero_idx = -first_site
        prefix_mean = np.concatenate([[0.0], np.cumsum(mu[zero_idx:])])
        prefix_var = np.concatenate([[0.0], np.cumsum(var[zero_idx:])])

    return QuenchedMomentTable(
        env=env, first_site=first_site, last_site=last_site,
        trunc_left=trunc_left, mu=mu, m2=m2, m3=m3, var=var,
        trunc_error_bound=bound, prefix_mean=prefix_mean, prefix_var=prefix_var,
    )


def _truncation_error_bound(env, trunc_left, first_site, last_site, m3):
    # Moving the reflection further left perturbs entry k by (boundary error)
    # times the running product of rho over (trunc_left, k]; the boundary
    # error itself is estimated by the scale of the third moments seen in the
    # window (m3 dominates m2 and mu pointwise).
    log_rho = np.log(env.rho_slice(trunc_left + 1, last_site))
    log_pi = np.cumsum(log_rho)
    reported = log_pi[first_site - trunc_left - 1:]
    cap = 2.0 * (1.0 + float(np.max(m3)))
    return float(np.exp(math.log(cap) + float(np.max(reported))))


@dataclass(frozen=True)
class LawConstants:
    """Closed-form law-level constants derived from r1 and r2.

    Finite exactly when the tail exponent exceeds 2 (equivalently r2 < 1).
    ``speed`` is the almost-sure limit of X_n / n; ``sigma2`` is the mean
    quenched variance of a single crossing time.
    """

    r1: float
    r2: float
    speed: float
    inv_speed: float
    mu0_sq_mean: float
    sigma2: float

    @property
    def mu0_variance(self):
        return self.mu0_sq_mean - self.inv_speed**2

    def position_scale(self, n):
        """Scale sigma * speed^{3/2} * sqrt(n) of the position-level CLT."""
        return math.sqrt(self.sigma2) * self.speed**1.5 * math.sqrt(n)


def law_constants(dist):
    """Compute :class:`LawConstants`; raises RegimeError when r1 or r2 >= 1."""
    r1 = dist.moment_rho(1.0)
    r2 = dist.moment_rho(2.0)
    if r1 >= 1.0 or r2 >= 1.0:
        raise RegimeError(
            "law constants need E[rho] < 1 and E[rho^2] < 1 (tail exponent > 2); "
            f"got r1={r1:.6g}, r2={r2:.6g}"
        )
    inv_speed = (1.0 + r1) / (1.0 - r1)
    mu0_sq_mean = (1.0 + 3.0 * r1 + 3.0 * r2 + r1 * r2) / ((1.0 - r1) * (1.0 - r2))
    sigma2 = 4.0 * (1.0 + r1) * (r1 + r2) / ((1.0 - r2) * (1.0 - r1) ** 2)
    return LawConstants(
        r1=r1, r2=r2, speed=1.0 / inv_speed, inv_speed=inv_speed,
        mu0_sq_mean=mu0_sq_mean, sigma2=sigma2,
    )


def centering_Zn(table, n, speed):
    """Random centering Z_n = speed * (E_w[T_m] - m / speed) with m = floor(n*speed).

    The floor is evaluated in double precision; all modules share this
    convention so the identity checks are exact.
    """
    m = math.floor(n * speed)
    if m <= 0:
        return 0.0
    table._check_prefix(m)
    return speed * float(table.prefix_mean[m]) - m


def truncation_control(dist, tol=1e-12):
    """Reflection depth L such that the neglected left tail is below ``tol``.

    The tail of every moment series decays like the running product of rho,
    which at the law level shrinks by a factor r1 per site (or by
    exp(E[log rho]/2), with safety margin, when r1 >= 1).  The returned depth
    follows a doubling schedule with floor 64.
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    if dist.log_rho_mean() >= 0:
        raise RegimeError("truncation control needs a right-transient law")
    r1 = dist.moment_rho(1.0)
    rate = r1 if r1 < 1.0 else math.exp(0.5 * dist.log_rho_mean())
    need = 0 if tol >= 1.0 else math.ceil(math.log(tol) / math.log(rate))
    depth = 64
    while depth < need:
        depth *= 2
    return depth


def third_moment_series(env, site, trunc_left):
    """Third moment at ``site`` by the summed-series route.

    Expands the recursion into the series
    f3(site) + sum_j prod(rho over (site-j, site]) * f3(site-j) + prod * 1,
    where f3 collects everything in the recursion except the carry term.
    Serves as an independent oracle for the recursion route.
    """
    if site <= trunc_left:
        raise RangeError("series oracle needs site > trunc_left")
    rho = env.rho_slice(trunc_left + 1, site)
    n = rho.size

    mu = np.empty(n + 1)
    m2 = np.empty(n + 1)
    mu[0], m2[0] = 1.0, 1.0
    for i in range(n):
        r = rho[i]
        mu[i + 1] = 1.0 + r * (1.0 + mu[i])
        m2[i + 1] = ((1.0 + r) * (1.0 + 2.0 * r) + 4.0 * r * (1.0 + r) * mu[i]
                     + 2.0 * r * r * mu[i] ** 2 + r * m2[i])

    def f3(i):
        # i indexes sites trunc_left+1 .. site as 1 .. n
        r = rho[i - 1]
        s = (1.0 + 3.0 * mu[i] + 3.0 * m2[i] + 3.0 * mu[i - 1]
             + 6.0 * mu[i - 1] * mu[i] + 3.0 * mu[i - 1] * m2[i]
             + 3.0 * m2[i - 1] + 3.0 * m2[i - 1] * mu[i])
        return 1.0 + r * s

    total = 0.0
    pi = 1.0
    for i in range(n, 0, -1):
        total += pi * f3(i)
        pi *= rho[i - 1]
    return total + pi  # boundary term: product times m3(trunc_left) = 1


def stationary_moment_series(dist, n_series, length, seed, depth=None, tol=1e-12):
    """Vectorised moment recursion across many independent environments.

    Returns arrays of shape (n_series, length) holding mu_k, m2_k, V_k for
    sites k = 0..length-1 of each series, each series reflected at depth
    ``depth`` to the left (chosen by :func:`truncation_control` by default).
    """
    if n_series < 1 or length < 1:
        raise ParameterError("need n_series >= 1 and length >= 1")
    if depth is None:
        depth = truncation_control(dist, tol)
    keys = series_row_keys(seed, n_series)
    mu_p = np.ones(n_series)
    m2_p = np.ones(n_series)
    mu_out = np.empty((n_series, length))
    m2_out = np.empty((n_series, length))
    v_out = np.empty((n_series, length))
    for site in range(-depth + 1, length):
        w = np.asarray(dist.quantile(column_uniforms(keys, site)), dtype=np.float64)
        r = (1.0 - w) / w
        one_plus = 1.0 + r
        mu_c = 1.0 + r * (1.0 + mu_p)
        m2_c = (one_plus * (1.0 + 2.0 * r) + 4.0 * r * one_plus * mu_p
                + 2.0 * r * r * mu_p * mu_p + r * m2_p)
        if site >= 0:
            mu_out[:, site] = mu_c
            m2_out[:, site] = m2_c
            v_out[:, site] = m2_c - mu_c * mu_c
        mu_p, m2_p = mu_c, m2_c
    return mu_out, m2_out, v_out


def ensemble_site_moments(dist, count, seed, depth=None, tol=1e-12):
    """i.i.d. draws of (mu_0, m2_0, V_0) over ``count`` independent environments."""
    mu, m2, v = stationary_moment_series(dist, count, 1, seed, depth=depth, tol=tol)
    return mu[:, 0], m2[:, 0], v[:, 0]

"""Exact quenched distributions on a truncated lattice.

Everything here is dynamic programming with the one-step kernel of the walk
(right with probability w_x, left with 1 - w_x) on states
``trunc_left..target``, with the leftmost site perfectly reflecting.  The
reflection is the same device the moment tables use, so distributions and
tables refer to one consistent, certifiable model of the environment; the
probability of ever feeling the reflection is controlled exactly by
:func:`ruin_probability`.

Provided laws:

* hitting time of a site (absorption flux of the forward DP),
* position of the walk after n steps,
* running maximum after n steps (through the survival identity
  P(max < k) = P(hitting time of k > n), never a separate DP),

plus Kolmogorov distances between their normalised CDFs and the standard
normal, evaluated exactly at the lattice atoms with both one-sided limits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import HorizonError, NumericError, ParameterError, RangeError
from .moments import centering_Zn

__all__ = [
    "LatticeCdf",
    "KolmogorovReport",
    "first_passage_cdf",
    "first_passage_survival",
    "position_pmf",
    "running_max_cdf",
    "ruin_probability",
    "kolmogorov_distance_T",
    "kolmogorov_distance_X",
    "hitting_site_for_level",
    "crossing_time_small_pmf",
    "abs_third_central_moment",
    "abs_third_prefix",
]

KIND_HITTING = "hitting_time"
KIND_POSITION = "position"
KIND_RUNNING_MAX = "running_max"

NORM_QUENCHED = "quenched_scaling"
NORM_DETERMINISTIC = "deterministic_scaling"
NORM_POSITION = "position"

_NEG_CLAMP = -1e-15


@dataclass
class LatticeCdf:
    """A (sub-)probability law on an arithmetic lattice.

    ``probs[i]`` is the mass at ``support_offset + i * step``; ``tail_mass``
    is whatever the truncation horizon did not capture (to the right for
    hitting times, beyond the largest tracked level for running maxima).
    ``boundary_contamination`` bounds the mass that interacted with the
    reflecting boundary (position law only).
    """

    support_offset: int
    step: int
    probs: np.ndarray
    tail_mass: float
    kind: str
    boundary_contamination: float = 0.0

    def values(self):
        return self.support_offset + self.step * np.arange(self.probs.size)

    def cdf(self):
        return np.cumsum(self.probs)

    def total_mass(self):
        return float(self.probs.sum() + self.tail_mass)

    def cdf_at(self, t):
        """P(X <= t), exact for t below the truncation horizon."""
        return float(1.0 - self.survival_at(t))

    def cdf_callable(self):
        """Vectorised CDF evaluator (for ECDF comparisons)."""
        vals = self.values()
        cdf = self.cdf()

        def evaluate(t):
            idx = np.searchsorted(vals, np.asarray(t), side="right") - 1
            out = np.where(idx >= 0, cdf[np.clip(idx, 0, cdf.size - 1)], 0.0)
            return out

        return evaluate

    def survival_at(self, t):
        """P(X > t); summed from the tail side so tiny survivals stay exact."""
        above = math.floor((t - self.support_offset) / self.step) + 1
        if above <= 0:
            return float(self.probs.sum() + self.tail_mass)
        if above >= self.probs.size:
            return float(self.tail_mass)
        return float(self.probs[above:].sum() + self.tail_mass)

    def mean_truncated(self):
        """Mean over the captured support (ignores tail mass)."""
        return float(np.dot(self.values().astype(np.float64), self.probs))

    def var_truncated(self):
        v = self.values().astype(np.float64)
        m = self.mean_truncated()
        return float(np.dot((v - m) ** 2, self.probs))

    def to_csv(self, path):
        """Write columns value, pmf, cdf."""
        vals = self.values()
        cdf = self.cdf()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["value", "pmf", "cdf"])
            for i in range(vals.size):
                writer.writerow([int(vals[i]), repr(float(self.probs[i])),
                                 repr(float(cdf[i]))])


@dataclass(frozen=True)
class KolmogorovReport:
    """Sup-distance between a normalised lattice CDF and the standard normal.

    The reported distance is exact up to ``tail_mass_bound`` plus 1e-10.
    """

    n: int
    distance: float
    arg_sup: float
    normalization: str
    tail_mass_bound: float


def _check_nonnegative(arr, what):
    low = float(arr.min()) if arr.size else 0.0
    if low < _NEG_CLAMP:
        raise NumericError(f"{what} produced probability {low} below clamp threshold")
    np.clip(arr, 0.0, None, out=arr)


def _reflected_right_probs(env, trunc_left, last_site):
    wr = env.omega_slice(trunc_left, last_site).astype(np.float64).copy()
    wr[0] = 1.0  # reflecting site: forced step to the right
    return wr


def first_passage_cdf(env, k, trunc_left=None, t_max=None, tail_tol=1e-9,
                      tables=None, max_doublings=16):
    """Exact law of the hitting time of site ``k`` (walk started at 0).

    Forward propagation on states ``trunc_left..k-1`` with absorption at
    ``k``; the returned lattice law lives on t = k, k+2, ... and reports the
    mass beyond the horizon as ``tail_mass``.

    When ``t_max`` is omitted the horizon starts at mean + 12 standard
    deviations (from ``tables`` if given, computed on the fly otherwise),
    rounded to parity, and doubles until the tail drops below ``tail_tol``.
    An explicit ``t_max`` is honoured as given, with whatever tail remains.
    """
    if trunc_left is None:
        trunc_left = env.left_index
    if k < 1:
        raise ParameterError(f"target site must be >= 1, got {k}")
    if trunc_left > -1:
        raise RangeError("the walk starts at 0; need trunc_left <= -1")
    if k > env.right_index + 1 or trunc_left < env.left_index:
        raise RangeError(f"target {k} needs window sites {trunc_left}..{k - 1}")

    auto = t_max is None
    if auto:
        mean, sd = _hitting_scale(env, k, trunc_left, tables)
        t_max = int(math.ceil(mean + 12.0 * sd))
        t_max += (t_max - k) % 2  # align horizon to the lattice parity
        t_max = max(t_max, k + 2)
    elif t_max < k:
        raise RangeError(f"t_max={t_max} below smallest possible hitting time {k}")

    wr = _reflected_right_probs(env, trunc_left, k - 1)
    wl = 1.0 - wr
    m = wr.size
    p = np.zeros(m)
    p[-trunc_left] = 1.0  # walk starts at site 0

    flux = np.zeros(t_max + 1)
    buf_r = np.empty(m)
    buf_l = np.empty(m)
    newp = np.empty(m)
    remaining = 1.0
    t = 0
    doublings = 0
    while True:
        while t < t_max:
            t += 1
            np.multiply(p, wr, out=buf_r)
            np.multiply(p, wl, out=buf_l)
            f = buf_r[-1]
            flux[t] = f
            remaining -= f
            newp[0] = buf_l[1]
            newp[1:] = buf_r[:-1]
            newp[1:-1] += buf_l[2:]
            p, newp = newp, p
            if remaining <= tail_tol:
                break
        if remaining <= tail_tol or not auto:
            break
        doublings += 1
        if doublings > max_doublings:
            raise HorizonError(
                f"hitting-time tail still {remaining:.3e} after {doublings - 1} "
                f"horizon doublings (t_max={t_max})"
            )
        t_max *= 2
        flux = np.concatenate([flux, np.zeros(t_max + 1 - flux.size)])

    tail = float(p.sum())
    probs = flux[k: t + 1: 2].copy()
    _check_nonnegative(probs, "hitting-time DP")
    return LatticeCdf(support_offset=k, step=2, probs=probs,
                      tail_mass=tail, kind=KIND_HITTING)


def _hitting_scale(env, k, trunc_left, tables):
    """Mean and standard deviation of T_k, for sizing the DP horizon."""
    if tables is not None and tables.first_site <= 0 and tables.last_site >= k - 1:
        return tables.mean_T(k), math.sqrt(max(tables.var_T(k), 1.0))
    rho = env.rho_slice(trunc_left + 1, k - 1)
    zero_offset = -trunc_left - 1  # loop index of site 0
    mu_p, m2_p = 1.0, 1.0
    mean = 0.0
    var = 0.0
    for i, r in enumerate(rho.tolist()):
        mu_c = 1.0 + r * (1.0 + mu_p)
        m2_c = ((1.0 + r) * (1.0 + 2.0 * r) + 4.0 * r * (1.0 + r) * mu_p
                + 2.0 * r * r * mu_p * mu_p + r * m2_p)
        mu_p, m2_p = mu_c, m2_c
        if i >= zero_offset:
            mean += mu_c
            var += m2_c - mu_c * mu_c
    return mean, math.sqrt(max(var, 1.0))


def first_passage_survival(env, k, n, trunc_left=None):
    """Exact P(T_k > n): run the absorbing DP exactly ``n`` steps and sum the
    surviving mass (no horizon, no tail uncertainty)."""
    if trunc_left is None:
        trunc_left = env.left_index
    if k < 1:
        raise ParameterError(f"target site must be >= 1, got {k}")
    if n < 0:
        raise ParameterError("n must be nonnegative")
    if trunc_left > -1:
        raise RangeError("the walk starts at 0; need trunc_left <= -1")
    wr = _reflected_right_probs(env, trunc_left, k - 1)
    wl = 1.0 - wr
    m = wr.size
    p = np.zeros(m)
    p[-trunc_left] = 1.0
    buf_r = np.empty(m)
    buf_l = np.empty(m)
    newp = np.empty(m)
    for _ in range(n):
        np.multiply(p, wr, out=buf_r)
        np.multiply(p, wl, out=buf_l)
        newp[0] = buf_l[1]
        newp[1:] = buf_r[:-1]
        newp[1:-1] += buf_l[2:]
        p, newp = newp, p
    return float(p.sum())


def position_pmf(env, n, trunc_left=None):
    """Exact law of the position after ``n`` steps.

    Mass that reaches the reflecting boundary is bounced (consistent with
    every other computation in the package) and its cumulative arrival is
    reported as ``boundary_contamination``; with a certified reflection depth
    it is negligible.
    """
    if n < 0:
        raise ParameterError("n must be nonnegative")
    if trunc_left is None:
        trunc_left = env.left_index
    if n == 0:
        return LatticeCdf(support_offset=0, step=2, probs=np.ones(1),
                          tail_mass=0.0, kind=KIND_POSITION)
    if n - 1 > env.right_index:
        raise RangeError(f"position law at time {n} needs window sites up to {n - 1}")

    wr = _reflected_right_probs(env, trunc_left, n - 1)
    wr = np.concatenate([wr, [0.0]])  # rightmost reachable site n: no exit needed
    wl = 1.0 - wr
    wl[0] = 0.0
    m = wr.size
    p = np.zeros(m)
    p[-trunc_left] = 1.0
    buf_r = np.empty(m)
    buf_l = np.empty(m)
    newp = np.empty(m)
    contamination = 0.0
    for _ in range(n):
        np.multiply(p, wr, out=buf_r)
        np.multiply(p, wl, out=buf_l)
        newp[0] = buf_l[1]
        newp[1:] = buf_r[:-1]
        newp[1:-1] += buf_l[2:]
        p, newp = newp, p
        contamination += float(p[0])

    # collect onto the parity lattice x = -n, -n+2, .., n (zeros left of the wall)
    probs = np.zeros(n + 1)
    x_low = max(trunc_left, -n)
    x_low += (n - x_low) % 2
    xs = np.arange(x_low, n + 1, 2)
    probs[(xs + n) // 2] = p[xs - trunc_left]
    _check_nonnegative(probs, "position DP")
    return LatticeCdf(support_offset=-n, step=2, probs=probs, tail_mass=0.0,
                      kind=KIND_POSITION, boundary_contamination=contamination)


def running_max_cdf(env, n, k_max, trunc_left=None):
    """Law of the running maximum after ``n`` steps, for levels 0..k_max.

    Built entirely from the survival identity P(max < k) = P(T_k > n); the
    mass at or above ``k_max`` is reported as tail.
    """
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    surv = np.array([first_passage_survival(env, k, n, trunc_left=trunc_left)
                     for k in range(1, k_max + 1)])
    probs = np.empty(k_max)
    probs[0] = surv[0]
    probs[1:] = np.diff(surv)
    # survivals come from independent DP runs; allow their summation noise
    if float(probs.min()) < -1e-13:
        raise NumericError("running-max survivals are non-monotone beyond roundoff")
    np.clip(probs, 0.0, None, out=probs)
    return LatticeCdf(support_offset=0, step=1, probs=probs,
                      tail_mass=float(1.0 - surv[-1]), kind=KIND_RUNNING_MAX)


def ruin_probability(env, left_site, right_site):
    """Exact P(walk hits ``left_site`` before ``right_site`` | start at 0).

    Uses the harmonic function of the birth-death chain, with the products of
    rho accumulated in log space; certifies reflection depths.  Underflows to
    exactly 0 for deep boundaries.
    """
    if not left_site < 0 < right_site:
        raise ParameterError("need left_site < 0 < right_site")
    log_rho = np.log(env.rho_slice(left_site + 1, right_site - 1))
    # pi(x) = prod of rho over (left_site, x]; log pi as a cumulative sum
    log_pi = np.concatenate([[0.0], np.cumsum(log_rho)])  # x = left_site..right_site-1
    top = log_pi[-left_site:]     # x = 0..right_site-1
    peak = float(np.max(log_pi))
    num = float(np.exp(top - peak).sum())
    den = float(np.exp(log_pi - peak).sum())
    return num / den


def _lattice_sup_vs_normal(values, probs, center, scale):
    cdf = np.cumsum(probs)
    cdf_left = cdf - probs
    z = (values - center) / scale
    phi = ndtr(z)
    gap_right = np.abs(cdf - phi)
    gap_left = np.abs(cdf_left - phi)
    i_r = int(np.argmax(gap_right))
    i_l = int(np.argmax(gap_left))
    if gap_right[i_r] >= gap_left[i_l]:
        return float(gap_right[i_r]), float(z[i_r])
    return float(gap_left[i_l]), float(z[i_l])


def kolmogorov_distance_T(env, tables, n, normalization="quenched",
                          sigma2=None, tail_tol=1e-9, fp=None, trunc_left=None):
    """Kolmogorov distance of the normalised hitting-time law from the normal.

    ``normalization="quenched"`` divides by the environment's own standard
    deviation sqrt(Var_w(T_n)); ``"deterministic"`` divides by sigma*sqrt(n)
    and requires ``sigma2``.  The sup is taken over both one-sided limits at
    every lattice atom, which is exact for a step function against a
    continuous CDF.
    """
    if normalization not in ("quenched", "deterministic"):
        raise ParameterError(f"unknown normalization {normalization!r}")
    if fp is None:
        fp = first_passage_cdf(env, n, trunc_left=trunc_left, tail_tol=tail_tol,
                               tables=tables)
    if fp.tail_mass > tail_tol:
        raise HorizonError(
            f"tail mass {fp.tail_mass:.3e} above tolerance {tail_tol:.1e}; "
            "raise t_max"
        )
    center = tables.mean_T(n)
    if normalization == "quenched":
        scale = math.sqrt(tables.var_T(n))
        tag = NORM_QUENCHED
    else:
        if sigma2 is None:
            raise ParameterError("deterministic normalization needs sigma2")
        scale = math.sqrt(sigma2 * n)
        tag = NORM_DETERMINISTIC
    distance, arg = _lattice_sup_vs_normal(
        fp.values().astype(np.float64), fp.probs, center, scale
    )
    return KolmogorovReport(n=n, distance=distance, arg_sup=arg,
                            normalization=tag, tail_mass_bound=fp.tail_mass)


def kolmogorov_distance_X(env, tables, n, consts, trunc_left=None,
                          pos=None, contamination_tol=1e-9):
    """Kolmogorov distance of the centred, scaled position law from the normal.

    Centering is ``n * speed - Z_n`` (random part from the moment tables) and
    the scale is sigma * speed^(3/2) * sqrt(n).
    """
    if n == 0:
        # point mass at the origin under zero scale: sup |1{x>=0} - Phi(x)|
        return KolmogorovReport(n=0, distance=0.5, arg_sup=0.0,
                                normalization=NORM_POSITION, tail_mass_bound=0.0)
    if pos is None:
        pos = position_pmf(env, n, trunc_left=trunc_left)
    if pos.boundary_contamination > contamination_tol:
        raise HorizonError(
            f"boundary contamination {pos.boundary_contamination:.3e} above "
            f"{contamination_tol:.1e}; deepen the reflection"
        )
    zn = centering_Zn(tables, n, consts.speed)
    center = n * consts.speed - zn
    scale = consts.position_scale(n)
    distance, arg = _lattice_sup_vs_normal(
        pos.values().astype(np.float64), pos.probs, center, scale
    )
    return KolmogorovReport(n=n, distance=distance, arg_sup=arg,
                            normalization=NORM_POSITION,
                            tail_mass_bound=pos.boundary_contamination)


def hitting_site_for_level(tables, n, x, consts):
    """Site k(n, x) whose hitting-time survival realises the running-maximum
    CDF at argument ``x``: ceil(n*speed - Z_n + x * sigma * speed^(3/2) * sqrt(n))."""
    zn = centering_Zn(tables, n, consts.speed)
    return math.ceil(n * consts.speed - zn + x * consts.position_scale(n))


def crossing_time_small_pmf(env, site, t_limit, trunc_left=None):
    """P(crossing time from ``site`` to ``site + 1`` equals t), t = 1..t_limit.

    Small exact DP used for the below-mean part of absolute central moments;
    the state space only needs the ``t_limit`` sites below the start.
    """
    if trunc_left is None:
        trunc_left = env.left_index
    lo = max(trunc_left, site - t_limit)
    wr = _reflected_right_probs(env, lo, site) if lo == trunc_left else \
        env.omega_slice(lo, site).astype(np.float64).copy()
    wl = 1.0 - wr
    m = wr.size
    p = np.zeros(m)
    p[-1] = 1.0  # start at `site`, the rightmost state
    out = np.zeros(t_limit + 1)
    buf_r = np.empty(m)
    buf_l = np.empty(m)
    newp = np.empty(m)
    for t in range(1, t_limit + 1):
        np.multiply(p, wr, out=buf_r)
        np.multiply(p, wl, out=buf_l)
        out[t] = buf_r[-1]
        newp[0] = buf_l[1] if m > 1 else 0.0
        if m > 1:
            newp[1:] = buf_r[:-1]
            newp[1:-1] += buf_l[2:]
        p, newp = newp, p
    return out[1:]


def abs_third_central_moment(env, tables, site, trunc_left=None):
    """Exact E|tau - mu|^3 for the crossing time at ``site``.

    Splits |t - mu|^3 at the mean: the signed third central moment comes from
    the moment tables, and the below-mean part needs the pmf only at the
    finitely many lattice points under mu, supplied by a small exact DP.
    """
    mu = tables.mu_at(site)
    m2 = tables.m2_at(site)
    m3 = tables.m3_at(site)
    signed = m3 - 3.0 * mu * m2 + 2.0 * mu**3
    t_limit = math.ceil(mu) - 1
    if t_limit < 1:
        return signed
    if t_limit <= 2:
        # only t = 1 lies under the mean: P(tau = 1) = w_site
        return signed + 2.0 * (mu - 1.0) ** 3 * env.omega(site)
    pmf = crossing_time_small_pmf(env, site, t_limit, trunc_left=trunc_left)
    t = np.arange(1, t_limit + 1)
    correction = 2.0 * float(np.dot((mu - t) ** 3, pmf))
    return signed + correction


def abs_third_prefix(env, tables, up_to, trunc_left=None):
    """Cumulative sums of E|tau - mu|^3 over sites 0..up_to-1.

    Entry [n] is the numerator sum of the normal-approximation error bound
    for T_n.
    """
    if up_to > tables.last_site + 1:
        raise RangeError("tables too short for requested prefix")
    vals = np.empty(up_to)
    for site in range(up_to):
        vals[site] = abs_third_central_moment(env, tables, site,
                                              trunc_left=trunc_left)
    return np.concatenate([[0.0], np.cumsum(vals)])

"""Seeded Monte Carlo oracle for the exact computations.

Walkers are simulated in lockstep with stateless per-walker random streams
(counter hashing of (seed, walker, step)), so batches are reproducible and
independent of chunking or thread count; the model is the same reflected
environment the DP modules use, making simulated and exact laws directly
comparable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, RangeError
from .moments import law_constants, stationary_moment_series
from .rng import step_uniforms, walker_keys

__all__ = [
    "SimBatch",
    "BacktrackEstimate",
    "Sigma0Estimate",
    "simulate_hitting_time",
    "simulate_position",
    "backtrack_probability",
    "annealed_sigma0_estimate",
    "annealed_sigma0_exact",
    "ecdf_distance",
    "dkw_epsilon",
    "wilson_interval",
]

DEFAULT_CAP = 10**9


@dataclass
class SimBatch:
    """A batch of i.i.d. samples under one quenched law.

    ``samples`` holds hitting times or positions as floats so that walkers
    stopped by the step cap can be recorded as +inf (they are excluded from
    moment estimates but stand as upper bounds in tail statistics).
    """

    kind: str
    params: dict
    samples: np.ndarray
    seed: int
    cap: int
    truncated_count: int
    running_max: np.ndarray | None = field(default=None, repr=False)

    def finite(self):
        return self.samples[np.isfinite(self.samples)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "value"])
            for i, v in enumerate(self.samples):
                writer.writerow([i, "inf" if math.isinf(v) else int(v)])


def _reflected(env, trunc_left, last_site):
    wr = env.omega_slice(trunc_left, last_site).astype(np.float64).copy()
    wr[0] = 1.0
    return wr


def simulate_hitting_time(env, k, n_samples, seed, cap=DEFAULT_CAP, trunc_left=None):
    """Sample the hitting time of site ``k`` under the quenched law.

    All walkers advance together; walker i consumes the uniform hashed from
    (seed, i, t) at step t, so the batch is identical however the active set
    is stored or split.  Walkers still unfinished at ``cap`` steps are
    recorded as +inf rather than discarded.
    """
    if k < 1:
        raise ParameterError(f"target site must be >= 1, got {k}")
    if n_samples < 1:
        raise ParameterError("n_samples must be positive")
    if trunc_left is None:
        trunc_left = env.left_index
    if trunc_left > -1:
        raise RangeError("the walk starts at 0; need trunc_left <= -1")
    if k - 1 > env.right_index:
        raise RangeError(f"window too small for target {k}")

    wr = _reflected(env, trunc_left, k - 1)
    offset = -trunc_left
    keys = walker_keys(seed, n_samples)
    idx = np.arange(n_samples)
    pos = np.zeros(n_samples, dtype=np.int64)
    out = np.full(n_samples, np.inf)

    t = 0
    while idx.size and t < cap:
        t += 1
        u = step_uniforms(keys, t)
        np.add(pos, np.where(u < wr[pos + offset], 1, -1), out=pos)
        hit = pos == k
        if hit.any():
            out[idx[hit]] = t
            keep = ~hit
            idx = idx[keep]
            pos = pos[keep]
            keys = keys[keep]
    return SimBatch(kind="hitting_time", params={"k": k}, samples=out,
                    seed=int(seed), cap=int(cap), truncated_count=int(idx.size))


def simulate_position(env, n, n_samples, seed, track_max=True, trunc_left=None):
    """Sample the position after ``n`` steps (and the running maximum).

    The window must cover sites ``trunc_left..n-1``; the reflecting site keeps
    walkers inside it, exactly as in the DP model.
    """
    if n < 0:
        raise ParameterError("n must be nonnegative")
    if n_samples < 1:
        raise ParameterError("n_samples must be positive")
    if trunc_left is None:
        trunc_left = env.left_index
    if trunc_left > -1:
        raise RangeError("the walk starts at 0; need trunc_left <= -1")
    if n > 0 and n - 1 > env.right_index:
        raise RangeError(f"window too small for horizon {n}")

    wr = _reflected(env, trunc_left, max(n - 1, trunc_left + 1))
    offset = -trunc_left
    keys = walker_keys(seed, n_samples)
    pos = np.zeros(n_samples, dtype=np.int64)
    rmax = np.zeros(n_samples, dtype=np.int64) if track_max else None
    for t in range(1, n + 1):
        u = step_uniforms(keys, t)
        np.add(pos, np.where(u < wr[pos + offset], 1, -1), out=pos)
        if track_max:
            np.maximum(rmax, pos, out=rmax)
    return SimBatch(kind="position", params={"n": n},
                    samples=pos.astype(np.float64), seed=int(seed),
                    cap=n, truncated_count=0,
                    running_max=None if rmax is None else rmax.astype(np.float64))


@dataclass(frozen=True)
class BacktrackEstimate:
    """Monte Carlo estimate of P(running max - position >= B log n)."""

    n: int
    B: float
    threshold: float
    n_samples: int
    successes: int
    estimate: float
    ci_low: float
    ci_high: float
    seed: int

    def to_json_dict(self):
        return {
            "op": "backtrack_probability",
            "params": {"n": self.n, "B": self.B, "threshold": self.threshold},
            "estimate": self.estimate,
            "se": math.sqrt(max(self.estimate * (1 - self.estimate), 0.0)
                            / self.n_samples),
            "ci_lo": self.ci_low,
            "ci_hi": self.ci_high,
            "seed": self.seed,
        }


def wilson_interval(successes, trials, z=1.959963984540054):
    """Wilson 95% score interval for a binomial proportion."""
    if trials < 1:
        raise ParameterError("trials must be positive")
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials**2)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def backtrack_probability(env, n, B, n_samples, seed, trunc_left=None, batch=None):
    """Estimate P(X_n^* - X_n >= B log n) with a Wilson 95% interval.

    ``B`` may be a scalar or a grid; a grid shares one batch of paths (common
    random numbers), so the estimates are nonincreasing in B by construction.
    """
    b_values = np.atleast_1d(np.asarray(B, dtype=np.float64))
    if (b_values <= 0).any():
        raise ParameterError("B must be positive")
    if batch is None:
        batch = simulate_position(env, n, n_samples, seed, track_max=True,
                                  trunc_left=trunc_left)
    gap = batch.running_max - batch.samples
    results = []
    for b in b_values:
        threshold = b * math.log(n)
        successes = int((gap >= threshold).sum())
        lo, hi = wilson_interval(successes, n_samples)
        results.append(BacktrackEstimate(
            n=n, B=float(b), threshold=threshold, n_samples=n_samples,
            successes=successes, estimate=successes / n_samples,
            ci_low=lo, ci_high=hi, seed=int(seed),
        ))
    return results[0] if np.isscalar(B) or np.asarray(B).ndim == 0 else results


@dataclass(frozen=True)
class Sigma0Estimate:
    """Plug-in estimate of the averaged-CLT variance.

    ``covariances[j]`` estimates the covariance between the mean crossing
    times at lag j (lag 0 is the variance term); their geometric decay is the
    point of reporting them individually.
    """

    estimate: float
    se: float
    mean_site_variance: float
    covariances: np.ndarray
    n_envs: int
    cutoff: int
    seed: int

    def to_json_dict(self):
        return {
            "op": "annealed_sigma0_estimate",
            "params": {"n_envs": self.n_envs, "cutoff": self.cutoff},
            "estimate": self.estimate,
            "se": self.se,
            "ci_lo": self.estimate - 1.959963984540054 * self.se,
            "ci_hi": self.estimate + 1.959963984540054 * self.se,
            "seed": self.seed,
            "mean_site_variance": self.mean_site_variance,
            "covariances": [float(c) for c in self.covariances],
        }


def annealed_sigma0_estimate(dist, n_envs, series_cutoff, seed, window=2048):
    """Estimate sigma_0^2 = E[V_0] + Var(mu_0) + 2 sum_j Cov(mu_0, mu_j).

    Overlapping-window plug-in: each replicate environment contributes the
    sample mean of V and the lag-0..cutoff autocovariances of its mu series
    (small-sample bias left uncorrected; this is a diagnostic estimator).
    The standard error is the spread of the per-replicate estimates.
    """
    if series_cutoff < 0:
        raise ParameterError("series_cutoff must be nonnegative")
    if n_envs < 2:
        raise ParameterError("need at least two replicate environments")
    law_constants(dist)  # regime gate: raises RegimeError unless kappa > 2
    length = window + series_cutoff
    mu, _, v = stationary_moment_series(dist, n_envs, length, seed)
    mu_body = mu[:, :window]
    mean_v = v[:, :window].mean(axis=1)
    centred = mu - mu_body.mean(axis=1, keepdims=True)
    covs = np.empty((n_envs, series_cutoff + 1))
    for lag in range(series_cutoff + 1):
        covs[:, lag] = (centred[:, :window] * centred[:, lag:lag + window]).mean(axis=1)
    per_env = mean_v + covs[:, 0] + 2.0 * covs[:, 1:].sum(axis=1)
    estimate = float(per_env.mean())
    se = float(per_env.std(ddof=1) / math.sqrt(n_envs))
    return Sigma0Estimate(
        estimate=estimate, se=se,
        mean_site_variance=float(mean_v.mean()),
        covariances=covs.mean(axis=0),
        n_envs=n_envs, cutoff=series_cutoff, seed=int(seed),
    )


def annealed_sigma0_exact(dist):
    """Closed form of sigma_0^2 for i.i.d. site laws.

    The mean crossing-time recursion makes Cov(mu_0, mu_j) = r1^j Var(mu_0)
    (rho_j is independent of everything to its left), so the covariance
    series sums to Var(mu_0) (1 + r1) / (1 - r1).
    """
    consts = law_constants(dist)
    return consts.sigma2 + consts.mu0_variance * (1.0 + consts.r1) / (1.0 - consts.r1)


def dkw_epsilon(n_samples, delta=0.01):
    """Two-sided DKW band half-width at confidence 1 - delta."""
    if n_samples < 1:
        raise ParameterError("n_samples must be positive")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n_samples))


def ecdf_distance(samples, ref, delta=0.01):
    """Sup distance between the sample ECDF and a reference CDF.

    ``ref`` is either a callable CDF (assumed continuous: the ECDF's two
    one-sided limits are both compared against the point value, which is the
    exact sup for a step function against a continuous curve) or a lattice
    law object with ``values()``, ``cdf()`` and ``probs`` (aligned one-sided
    limits are compared at every reference atom, the exact sup when both
    sides jump on the same lattice).

    Returns ``(distance, band)`` where ``band`` is the DKW half-width at
    confidence 1 - delta; +inf samples count in the denominator but add no
    atom.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ParameterError("need at least one sample")
    n = samples.size
    finite = np.sort(samples[np.isfinite(samples)])
    if finite.size == 0:
        raise ParameterError("need at least one finite sample")

    if callable(ref):
        atoms, counts = np.unique(finite, return_counts=True)
        cum = np.cumsum(counts) / n
        cum_left = cum - counts / n
        vals = np.asarray(ref(atoms), dtype=np.float64)
        distance = float(max(np.max(np.abs(cum - vals)),
                             np.max(np.abs(cum_left - vals))))
    else:
        pts = ref.values().astype(np.float64)
        ref_right = ref.cdf()
        ref_left = ref_right - ref.probs
        ecdf_right = np.searchsorted(finite, pts, side="right") / n
        ecdf_left = np.searchsorted(finite, pts, side="left") / n
        distance = float(max(np.max(np.abs(ecdf_right - ref_right)),
                             np.max(np.abs(ecdf_left - ref_left))))
    return distance, dkw_epsilon(n, delta)

"""Counter-based random number derivation.

All randomness in the package is stateless: a draw is a pure function of a
64-bit key and one or two integer counters, obtained by hashing with the
splitmix64 output permutation.  This makes every consumer reproducible and
order-independent; environment sites depend only on (seed, site index), so a
window can be extended in either direction without disturbing sites already
sampled, and Monte Carlo walkers can be filtered, chunked, or parallelised
without changing their paths.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)

# Domain labels keep unrelated consumers of one master seed uncorrelated.
DOMAIN_ENV = 0x45
DOMAIN_WALK = 0x57
DOMAIN_SERIES = 0x53
DOMAIN_DERIVE = 0x44


def mix64(z):
    """splitmix64 finalizer on uint64 scalars or arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_A
        z = (z ^ (z >> np.uint64(27))) * _MIX_B
        return z ^ (z >> np.uint64(31))


def substream(key, index):
    """Key of the ``index``-th substream of ``key`` (splitmix64 stream element).

    ``index`` may be a scalar or an integer array; negative indices are taken
    modulo 2**64, so signed site coordinates are valid counters.
    """
    idx = np.asarray(index)
    if idx.dtype.kind == "i":
        idx = idx.astype(np.uint64)
    else:
        idx = idx.astype(np.uint64, copy=False)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(key) + GOLDEN * idx)


def to_uniform(bits):
    """Map uint64 hash output to floats strictly inside (0, 1)."""
    return ((np.asarray(bits) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def domain_key(seed, domain):
    """Master key for one domain of use of a user-facing seed."""
    seed64 = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return int(substream(mix64(seed64), domain))


def derive_seed(master_seed, index):
    """Child seed for replicate ``index`` of an experiment under ``master_seed``."""
    return int(substream(domain_key(master_seed, DOMAIN_DERIVE), int(index)))


def site_uniforms(seed, sites):
    """Uniform(0,1) variates for environment sites.

    Parameters
    ----------
    seed : int
        User-facing 64-bit seed.
    sites : array_like of int
        Site coordinates (may be negative).

    Returns
    -------
    ndarray of float64, one variate per site, depending only on (seed, site).
    """
    key = domain_key(seed, DOMAIN_ENV)
    return to_uniform(substream(key, np.asarray(sites, dtype=np.int64)))


def walker_keys(seed, n_walkers):
    """Per-walker stream keys for a Monte Carlo batch."""
    key = domain_key(seed, DOMAIN_WALK)
    return substream(key, np.arange(n_walkers, dtype=np.uint64))


def step_uniforms(keys, t):
    """Uniform variates for step ``t`` of the walkers owning ``keys``."""
    with np.errstate(over="ignore"):
        return to_uniform(mix64(keys + GOLDEN * np.uint64(t)))


def series_uniforms(seed, series_index, positions):
    """Uniforms for row ``series_index`` of a family of independent series."""
    key = domain_key(seed, DOMAIN_SERIES)
    row_key = int(substream(key, int(series_index)))
    return to_uniform(substream(row_key, np.asarray(positions, dtype=np.int64)))


def series_row_keys(seed, n_series):
    """Stream keys for ``n_series`` independent series under one seed."""
    key = domain_key(seed, DOMAIN_SERIES)
    return substream(key, np.arange(n_series, dtype=np.uint64))


def column_uniforms(row_keys, position):
    """Uniforms at one position across many series (vectorised over rows)."""
    pos64 = np.uint64(int(position) & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        return to_uniform(mix64(row_keys + GOLDEN * pos64))

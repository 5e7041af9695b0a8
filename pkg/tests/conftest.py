import numpy as np
import pytest

import rwre


@pytest.fixture(scope="session")
def deg_law():
    return rwre.Degenerate(2.0 / 3.0)


@pytest.fixture(scope="session")
def beta51():
    return rwre.Beta(5.0, 1.0)


@pytest.fixture(scope="session")
def beta71():
    return rwre.Beta(7.0, 1.0)


@pytest.fixture(scope="session")
def deg_env(deg_law):
    return rwre.sample_environment(deg_law, -80, 600, seed=101)


@pytest.fixture(scope="session")
def deg_tables(deg_env):
    return rwre.moment_tables(deg_env, last_site=600, first_site=-1)


@pytest.fixture(scope="session")
def beta_env(beta51):
    return rwre.certified_window(beta51, seed=202, right=2200)


@pytest.fixture(scope="session")
def beta_tables(beta_env):
    return rwre.moment_tables(beta_env, last_site=2200, first_site=-1)


def brute_force_position_max(env, n, trunc_left=None):
    """Enumeration oracle: joint DP over (position, running max) pairs.

    Independent of the production modules: builds the full transition over
    the pair chain and returns (position pmf, running-max pmf) after n steps.
    """
    if trunc_left is None:
        trunc_left = env.left_index
    lo = trunc_left
    width = n - lo + 1
    # state (x, m): probability table indexed [x - lo, m]  (m >= max(x, 0))
    table = np.zeros((width, n + 1))
    table[-lo, 0] = 1.0
    omegas = env.omega_slice(lo, n - 1 if n >= 1 else lo).astype(float).copy()
    omegas[0] = 1.0  # reflecting wall
    for _ in range(n):
        new = np.zeros_like(table)
        xs, ms = np.nonzero(table)
        for xi, m in zip(xs, ms):
            p = table[xi, m]
            if p == 0.0:
                continue
            x = xi + lo
            w = omegas[xi]
            up = x + 1
            new[xi + 1, max(m, up)] += p * w
            if w < 1.0:
                new[xi - 1, m] += p * (1.0 - w)
        table = new
    pos_pmf = table.sum(axis=1)
    max_pmf = table.sum(axis=0)
    return pos_pmf, max_pmf

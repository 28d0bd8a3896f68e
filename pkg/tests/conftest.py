import numpy as np
import pytest


def random_stable(rng, d, shift=0.5):
    a = rng.standard_normal((d, d))
    # Sym(-C) = shift I + A A^T / d is positive definite, so C is stable too
    return -(a @ a.T / d + shift * np.eye(d)) + 0.3 * (a - a.T)


def random_spd(rng, d):
    b = rng.standard_normal((d, d))
    return b @ b.T / d + 0.1 * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def mixing_noise(basis):
    # two modes whose sum is in the basis; gives a nonzero Itô-Stokes drift
    f = np.zeros(basis.dim)
    f[basis.coord_index((1, 0, 0), 0)] = 1.0
    f[basis.coord_index((0, 1, 0), 1)] = 1.0
    f /= np.sqrt(2.0)
    return np.outer(f, f)

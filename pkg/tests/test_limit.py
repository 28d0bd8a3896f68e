import json

import numpy as np
import pytest

from roughhom import GridError, InputError
from roughhom.limit import limit_lift, limit_prefix, strat_consistency_check
from roughhom.operators import drift_tensor_D
from roughhom.roughpath import chen_defect, geometric_defect, holder_seminorm

C2 = np.array([[-1.0, 0.4], [-0.4, -2.0]])
Q2 = np.array([[1.0, 0.3], [0.3, 0.5]])


def brownian(rng, n, Q, T=1.0, R=None):
    root = np.linalg.cholesky(Q)
    shape = (n, Q.shape[0]) if R is None else (R, n, Q.shape[0])
    return rng.standard_normal(shape) @ root.T * np.sqrt(T / n)


def test_zero_increments():
    L = limit_lift(np.zeros((64, 2)), C2, Q2, 3)
    g = L.rough_path.times
    assert np.all(L.rough_path.level1.values == 0)
    D = drift_tensor_D(C2, Q2).entries
    assert np.allclose(L.rough_path.level2.values[1, 5], (g[5] - g[1]) * D, atol=1e-15)


def test_identity_case():
    L = limit_lift(np.zeros((8, 3)), -np.eye(3), np.eye(3), 1)
    assert np.allclose(L.D.entries, 0.5 * np.eye(3))
    assert np.all(L.M.entries == 0)


def test_level1_is_G_times_W(rng):
    dW = brownian(rng, 128, Q2)
    L = limit_lift(dW, C2, Q2, 4)
    G = np.linalg.inv(-C2)
    assert np.allclose(L.rough_path.level1.values[0, -1], G @ dW.sum(axis=0), atol=1e-13)
    assert chen_defect(L.rough_path) < 1e-12 * np.abs(L.rough_path.level2.values).max()


def test_ito_mean(rng):
    R, n = 2000, 64
    dW = brownian(rng, n, Q2, R=R)
    B, Z = limit_prefix(dW, C2, "ito", 1.0, drift_tensor_D(C2, Q2).entries)
    t = 0.5
    mean = Z[:, n // 2].mean(axis=0)
    se = Z[:, n // 2].std(axis=0) / np.sqrt(R)
    assert np.all(np.abs(mean - t * drift_tensor_D(C2, Q2).entries) < 4 * se)


def test_strat_zero_path():
    ito = limit_lift(np.zeros((16, 2)), C2, Q2, 2, "ito")
    strat = limit_lift(np.zeros((16, 2)), C2, Q2, 2, "stratonovich")
    symD = np.linalg.norm(ito.D.sym())
    assert strat_consistency_check(ito, strat) == pytest.approx(symD, rel=1e-12)


def test_strat_scalar_identity():
    # C=-1, Q=1: D = 1/2, M = 0.  Summation by parts gives, pathwise,
    # Itô - Strat = (1 - QV)/2 - sum over cells (d1^2 - d2^2)/2
    rng = np.random.default_rng(1)
    for n in (64, 1024):
        dW = brownian(rng, n, np.eye(1))
        ito = limit_lift(dW, -np.eye(1), np.eye(1), 0, "ito")
        strat = limit_lift(dW, -np.eye(1), np.eye(1), 0, "stratonovich")
        d = ito.rough_path.level2.values[0, 1, 0, 0] - strat.rough_path.level2.values[0, 1, 0, 0]
        d1, d2 = dW[0::2, 0], dW[1::2, 0]
        expected = 0.5 * (1 - np.sum(dW**2)) - 0.5 * np.sum(d1**2 - d2**2)
        assert d == pytest.approx(expected, abs=1e-12)


def test_strat_minus_ito_vanishes_under_refinement():
    rng = np.random.default_rng(2)
    rms = []
    for n in (64, 256, 1024):
        vals = []
        for _ in range(200):
            dW = brownian(rng, n, np.eye(1))
            ito = limit_lift(dW, -np.eye(1), np.eye(1), 0, "ito")
            strat = limit_lift(dW, -np.eye(1), np.eye(1), 0, "stratonovich")
            vals.append(strat_consistency_check(ito, strat))
        rms.append(np.sqrt(np.mean(np.square(vals))))
    assert rms[0] > rms[1] > rms[2]
    # O(h^1/2): a factor 4 is expected over 16x refinement
    assert 2.5 < rms[0] / rms[2] < 6.5


def test_strat_geometric_under_refinement():
    rng = np.random.default_rng(3)
    out = []
    for n in (64, 256, 1024):
        g = [geometric_defect(limit_lift(brownian(rng, n, Q2), C2, Q2, 1, "stratonovich")
                              .rough_path) for _ in range(100)]
        out.append(np.sqrt(np.mean(np.square(g))))
    assert out[0] > out[1] > out[2]


def test_holder_stable():
    rng = np.random.default_rng(4)
    n = 2**14
    dW = brownian(rng, n, Q2)
    vals = []
    for level in (6, 7, 8):
        rp = limit_lift(dW, C2, Q2, level).rough_path
        vals.append((holder_seminorm(rp.level1, 0.4), holder_seminorm(rp.level2, 0.8)))
    vals = np.array(vals)
    assert np.all(vals.max(axis=0) / vals.min(axis=0) < 2.0)


def test_errors(rng):
    with pytest.raises(GridError):
        limit_lift(np.zeros((10, 2)), C2, Q2, 2)
    with pytest.raises(GridError):
        limit_lift(np.zeros((4, 2)), C2, Q2, 2, "stratonovich")
    with pytest.raises(InputError):
        limit_prefix(np.zeros((4, 2)), C2, "midpoint")
    a = limit_lift(brownian(rng, 16, Q2), C2, Q2, 2)
    b = limit_lift(brownian(rng, 16, Q2), C2, Q2, 2, "stratonovich")
    with pytest.raises(InputError):
        strat_consistency_check(a, b)
    d = json.loads(a.to_json())
    assert d["form"] == "ito" and len(d["D"]) == 2

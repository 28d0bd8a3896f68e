import json

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings, strategies as st

from roughhom import (AssumptionViolationError, InputError, InvalidOperatorError,
                      StabilityError)
from roughhom.operators import (LinearOperator, Tensor2, correction_M, drift_tensor_D,
                                ito_stratonovich_corrector, matrix_exponential,
                                solve_lyapunov, validate_generator)

from conftest import random_spd, random_stable


def vec_lyapunov_oracle(C, Q):
    # independent: row-major vectorization, C X + X C^T = -Q
    n = C.shape[0]
    big = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                big[i * n + j, k * n + j] += C[i, k]
                big[i * n + j, i * n + k] += C[j, k]
    return np.linalg.solve(big, -Q.ravel()).reshape(n, n)


def test_operator_rejects_nonfinite():
    with pytest.raises(InvalidOperatorError):
        LinearOperator(np.array([[1.0, np.nan], [0, 1]]))
    with pytest.raises(InvalidOperatorError):
        LinearOperator(np.ones((2, 3)))


def test_operator_json_roundtrip(rng):
    op = LinearOperator(rng.standard_normal((3, 3)))
    back = LinearOperator.from_json(op.to_json())
    assert np.array_equal(back.entries, op.entries)
    assert json.loads(op.to_json())["dim"] == 3


def test_tensor_convention():
    a, b = np.array([1.0, 2.0]), np.array([3.0, 5.0])
    T = Tensor2.outer(a, b)
    assert T.entries[0, 1] == a[0] * b[1]
    assert np.array_equal(T.operator, T.entries.T)


def test_expm_cases(rng):
    C = rng.standard_normal((3, 3))
    assert np.array_equal(matrix_exponential(C, 0.0).entries, np.eye(3))
    E = matrix_exponential(np.diag([-1.0, -2.0]), 1.0).entries
    assert np.allclose(E, np.diag([np.exp(-1), np.exp(-2)]), rtol=1e-14, atol=0)
    # Taylor series oracle
    t = 0.7
    term, total, k = np.eye(3), np.eye(3), 0
    while np.abs(term).max() > 1e-14 * 1e-3:
        k += 1
        term = term @ (C * t) / k
        total = total + term
    assert np.allclose(matrix_exponential(C, t).entries, total, rtol=1e-12, atol=1e-13)
    with pytest.raises(InputError):
        matrix_exponential(C, -1.0)


def test_expm_semigroup(rng):
    C = random_stable(rng, 4)
    for _ in range(20):
        s, t = rng.uniform(0, 2, 2)
        lhs = matrix_exponential(C, s + t).entries
        rhs = matrix_exponential(C, s).entries @ matrix_exponential(C, t).entries
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)


def test_lyapunov_identity():
    assert np.allclose(solve_lyapunov(-np.eye(3), np.eye(3)).entries, 0.5 * np.eye(3))


@pytest.mark.parametrize("rho", [0.0, 0.3, -0.7])
def test_lyapunov_two_by_two(rho):
    C = -np.diag([1.0, 2.0])
    Q = np.array([[1.0, rho], [rho, 1.0]])
    X = solve_lyapunov(C, Q).entries
    assert np.allclose(X, [[0.5, rho / 3], [rho / 3, 0.25]], atol=1e-14)
    assert np.allclose(X, vec_lyapunov_oracle(C, Q), atol=1e-14)


@pytest.mark.parametrize("method", ["kron", "schur"])
def test_lyapunov_random(rng, method):
    for _ in range(10):
        C, Q = random_stable(rng, 5), random_spd(rng, 5)
        X = solve_lyapunov(C, Q, method=method).entries
        assert np.linalg.norm(C @ X + X @ C.T + Q) <= 1e-10 * np.linalg.norm(Q)
        assert np.allclose(X, vec_lyapunov_oracle(C, Q), atol=1e-10)


def test_lyapunov_quadrature(rng):
    C, Q = random_stable(rng, 3), random_spd(rng, 3)
    iota = -np.max(np.linalg.eigvals(C).real)
    ts = np.linspace(0, 40 / iota, 4001)
    vals = np.array([matrix_exponential(C, t).entries @ Q @ matrix_exponential(C, t).entries.T
                     for t in ts])
    X = scipy.integrate.simpson(vals, x=ts, axis=0)
    assert np.allclose(X, solve_lyapunov(C, Q).entries, atol=1e-6)


def test_lyapunov_errors():
    with pytest.raises(StabilityError):
        solve_lyapunov(np.diag([-1.0, 0.1]), np.eye(2))
    with pytest.raises(InputError):
        solve_lyapunov(-np.eye(2), np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_correction_M_two_by_two():
    rho = 0.3
    C = -np.diag([1.0, 2.0])
    Q = np.array([[1.0, rho], [rho, 1.0]])
    M = correction_M(C, Q)
    # as an operator <M e_1, e_2> = rho/12
    assert abs(M.operator[0, 1] - rho / 12) <= 1e-12
    D = drift_tensor_D(C, Q)
    assert np.allclose(D.operator, [[0.5, rho / 3], [rho / 6, 0.125]], atol=1e-14)


def test_commuting_symmetric_M_vanishes(rng):
    U, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    C = U @ np.diag(-rng.uniform(0.5, 3, 4)) @ U.T
    Q = U @ np.diag(rng.uniform(0.1, 2, 4)) @ U.T
    assert correction_M(C, Q).hs_norm() <= 1e-12
    G = np.linalg.inv(-C)
    assert np.allclose(solve_lyapunov(C, Q).entries, 0.5 * G @ Q, atol=1e-12)


def test_D_identity_case():
    assert np.allclose(drift_tensor_D(-np.eye(2), np.eye(2)).entries, 0.5 * np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_M_antisymmetric_and_sym_D(d, seed):
    rng = np.random.default_rng(seed)
    C, Q = random_stable(rng, d), random_spd(rng, d)
    M = correction_M(C, Q)
    assert np.array_equal(M.entries, -M.entries.T)
    D = drift_tensor_D(C, Q)
    assert np.allclose(D.sym(), ito_stratonovich_corrector(C, Q), atol=1e-10)


def test_validate_generator(rng):
    g = validate_generator(-np.eye(3))
    assert g.iota == pytest.approx(1.0) and g.gamma == pytest.approx(1.0)
    with pytest.raises(AssumptionViolationError):
        validate_generator(np.diag([-1.0, 0.1]))
    S = np.array([[0.0, 1.0], [-1.0, 0.0]])
    C = -np.diag([1.0, 2.0]) + 0.1 * S
    g = validate_generator(C)
    assert g.iota == pytest.approx(-np.linalg.eigvals(C).real.max(), abs=1e-12)
    assert g.gamma == pytest.approx(np.linalg.eigvalsh(-(C + C.T) / 2).min(), abs=1e-12)
    # stable but not coercive
    with pytest.raises(AssumptionViolationError, match="coercivity"):
        validate_generator(np.array([[-1.0, 10.0], [0.0, -1.0]]))

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughhom import AssumptionViolationError, InputError
from roughhom.fluid import (FluidConfig, TorusBasis, VelocityField, build_C_operator,
                            leray_project, nonlinearity_b, sobolev_norm, sobolev_weights,
                            stokes_operator)
from roughhom.operators import validate_generator


@pytest.fixture(scope="module")
def b31():
    return TorusBasis(3, 1)


def grid_points(d, n):
    ax = 2 * np.pi * np.arange(n) / n
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)


def physical_b(basis, u, v, n=8):
    # -P(u . grad v) by pointwise products on a grid, projected on the basis functions
    x = grid_points(basis.d, n)
    phase = np.exp(1j * x @ basis.modes.T)  # (P, m)
    U = basis.evaluate(u, x)
    vhat = basis.to_fourier(v)
    grad = np.real(np.einsum("pm,mi,mj->pij", phase, vhat, 1j * basis.modes))
    f = np.einsum("pj,pij->pi", U, grad)
    phis = np.stack([basis.evaluate(np.eye(basis.dim)[c], x) for c in range(basis.dim)])
    return -np.einsum("cpi,pi->c", phis, f) / x.shape[0]


def test_basis_sizes():
    assert TorusBasis(3, 1).dim == 52
    assert TorusBasis(3, 2).dim == 248
    assert TorusBasis(2, 2).dim == 24
    with pytest.raises(InputError):
        TorusBasis(4, 1)


def test_basis_structure(b31):
    assert not np.any(np.all(b31.modes == 0, axis=1))
    assert {tuple(k) for k in b31.modes} == {tuple(-k) for k in b31.modes}
    for k, pols in zip(b31.half_modes, b31.polarizations):
        assert np.allclose(pols @ k, 0)
        assert np.allclose(pols @ pols.T, np.eye(2))
    with pytest.raises(IndexError):
        b31.mode_index((2, 0, 0))


def test_coordinates_orthonormal(b31, rng):
    x = grid_points(3, 6)
    u, v = rng.standard_normal((2, b31.dim))
    ip = np.mean(np.sum(b31.evaluate(u, x) * b31.evaluate(v, x), axis=1))
    assert ip == pytest.approx(u @ v, rel=1e-12)


def test_leray(b31, rng):
    grad = np.array(b31.modes, dtype=complex) * rng.standard_normal((b31.n_modes, 1))
    assert np.allclose(leray_project(b31, grad).coefficients, 0, atol=1e-14)
    u = VelocityField(b31, rng.standard_normal(b31.dim))
    assert np.allclose(leray_project(b31, u.fourier()).coefficients, u.coefficients, atol=1e-14)
    raw = rng.standard_normal((b31.n_modes, 3)) + 1j * rng.standard_normal((b31.n_modes, 3))
    P = leray_project(b31, raw)
    assert np.allclose(leray_project(b31, P.fourier()).coefficients, P.coefficients, atol=1e-14)
    assert np.allclose(P.divergence(), 0, atol=1e-13)
    with pytest.raises(IndexError):
        leray_project(b31, {(3, 0, 0): [0, 1, 0]})


def test_leray_orthogonal(b31, rng):
    x = rng.standard_normal((b31.n_modes, 3)) + 0j
    x[b31.n_half:] = x[:b31.n_half].conj()  # real field
    y = rng.standard_normal((b31.n_modes, 3)) + 0j
    y[b31.n_half:] = y[:b31.n_half].conj()
    Px, Py = leray_project(b31, x), leray_project(b31, y)
    resid = y - Py.fourier()
    assert abs(np.vdot(Px.fourier(), resid)) < 1e-12


def test_b_matches_physical_grid(b31, rng):
    u, v = rng.standard_normal((2, b31.dim))
    assert np.allclose(b31.trilinear.apply(u, v), physical_b(b31, u, v), atol=1e-12)


def test_b_2d_matches_physical_grid(rng):
    basis = TorusBasis(2, 2)
    u, v = rng.standard_normal((2, basis.dim))
    assert np.allclose(basis.trilinear.apply(u, v), physical_b(basis, u, v, n=12), atol=1e-12)


def test_shear_mode_kills_itself(rng):
    basis = TorusBasis(3, 2)
    u = VelocityField.single_mode(basis, (1, 0, 0), 0, "cos", 1.7)
    assert np.abs(nonlinearity_b(u, u).coefficients).max() < 1e-14


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cancellation_and_antisymmetry(seed):
    basis = TorusBasis(3, 1)
    rng = np.random.default_rng(seed)
    u, v, w = (VelocityField(basis, x) for x in rng.standard_normal((3, basis.dim)))
    assert abs(nonlinearity_b(u, v).inner(v)) < 1e-12
    assert nonlinearity_b(u, v).inner(w) == pytest.approx(-nonlinearity_b(u, w).inner(v),
                                                           abs=1e-12)


def test_bilinear(b31, rng):
    u, u2, v = rng.standard_normal((3, b31.dim))
    a, c = 0.7, -1.3
    T = b31.trilinear
    lhs = T.apply(a * u + c * u2, v)
    rhs = a * T.apply(u, v) + c * T.apply(u2, v)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_outputs_divergence_free(b31, rng):
    u, v = (VelocityField(b31, x) for x in rng.standard_normal((2, b31.dim)))
    for f in (u + v, 2.0 * u, nonlinearity_b(u, v)):
        assert np.abs(f.divergence()).max() < 1e-13


def test_sobolev(b31, rng):
    u = VelocityField(b31, rng.standard_normal(b31.dim))
    assert sobolev_norm(u, 0) == pytest.approx(np.linalg.norm(u.coefficients))
    basis = TorusBasis(3, 2)
    s = VelocityField.single_mode(basis, (1, 1, 0), 1, "sin", 2.0)
    assert sobolev_norm(s, 3) == pytest.approx(np.sqrt(2) ** 3 * 2.0)
    x = grid_points(3, 6)
    phys = np.sqrt(np.mean(np.sum(b31.evaluate(u.coefficients, x) ** 2, axis=1)))
    assert phys == pytest.approx(sobolev_norm(u, 0), rel=1e-12)
    norms = [sobolev_norm(u, n) for n in range(4)]
    assert norms == sorted(norms)
    assert np.all(sobolev_weights(b31, 0) == 1)


def test_stokes_and_C(b31):
    A = stokes_operator(b31, 0.5).entries
    assert np.allclose(np.diag(A), -0.5 * b31.k_squared)
    assert np.array_equal(build_C_operator(b31).entries, -np.eye(b31.dim))
    C = build_C_operator(b31, varsigma=1.0).entries
    assert C[b31.coord_index((1, 0, 0), 0), b31.coord_index((1, 0, 0), 0)] == -1.0
    rng = np.random.default_rng(0)
    S = rng.standard_normal((b31.dim, b31.dim))
    S = 0.05 * (S - S.T)
    op = build_C_operator(b31, rho=2.0, K_perturbation=S)
    assert op.iota == pytest.approx(2.0, abs=1e-10)
    assert op.iota == pytest.approx(validate_generator(op.entries).iota)
    with pytest.raises(AssumptionViolationError):
        build_C_operator(b31, K_perturbation=3 * np.eye(b31.dim))


def test_field_serialization(b31, rng):
    u = VelocityField(b31, rng.standard_normal(b31.dim))
    back = VelocityField.from_json(u.to_json())
    assert np.array_equal(back.coefficients, u.coefficients)
    lines = u.to_csv().splitlines()
    assert lines[0] == "mode,polarization,coefficient"
    assert len(lines) == b31.dim + 1
    with pytest.raises(InputError):
        VelocityField(b31, np.full(b31.dim, np.nan))
    with pytest.raises(InputError):
        u + VelocityField.zeros(TorusBasis(3, 2))


def test_fluid_config_warns():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        FluidConfig(theta0=1.0)
    assert rec
    with pytest.raises(InputError):
        FluidConfig(nu=0.0)

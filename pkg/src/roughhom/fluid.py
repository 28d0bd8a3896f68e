"""Truncated Fourier-Galerkin model of incompressible flow on the torus.

Real coordinates
----------------
For every mode ``k`` in the positive half of the lattice and every
polarization ``e_a`` orthogonal to ``k`` there are two coordinates,
carried by ``sqrt(2) cos(k.x) e_a`` and ``sqrt(2) sin(k.x) e_a``.  These are
orthonormal in the mean-normalized L2 product, so the Euclidean norm of
the coordinate vector is the L2 norm of the field.  Divergence-freeness
is structural.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError
from .kernels import TrilinearForm
from .operators import LinearOperator, as_matrix, validate_generator

__all__ = [
    "TorusBasis",
    "VelocityField",
    "FluidConfig",
    "leray_project",
    "nonlinearity_b",
    "sobolev_norm",
    "sobolev_weights",
    "stokes_operator",
    "build_C_operator",
]

_SQRT2 = np.sqrt(2.0)


def _positive_half(k):
    for x in k:
        if x != 0:
            return x > 0
    return False


def _polarizations(k):
    k = np.asarray(k, dtype=float)
    kn = k / np.linalg.norm(k)
    if k.size == 2:
        return np.array([[-kn[1], kn[0]]])
    # axis least aligned with k, then Gram-Schmidt
    ax = np.zeros(3)
    ax[np.argmin(np.abs(kn))] = 1.0
    e1 = ax - (ax @ kn) * kn
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(kn, e1)
    return np.array([e1, e2])


class TorusBasis:
    """Divergence-free real Fourier basis on the d-torus with cutoff ``K``.

    Attributes
    ----------
    modes : ndarray (n_modes, d)
        All nonzero lattice vectors with ``|k|_inf <= K``, closed under
        negation.  Positive-half modes come first, then their negatives in
        the same order.
    polarizations : ndarray (n_half, d-1, d)
        Orthonormal vectors orthogonal to each positive-half mode.
    """

    def __init__(self, d: int = 3, K: int = 2):
        if d not in (2, 3):
            raise InputError(f"dimension must be 2 or 3, got {d}")
        if int(K) != K or K < 1:
            raise InputError(f"cutoff must be a positive integer, got {K}")
        self.d = int(d)
        self.K = int(K)
        half = [k for k in itertools.product(range(-K, K + 1), repeat=d) if _positive_half(k)]
        self.half_modes = np.array(half, dtype=int)
        self.modes = np.concatenate([self.half_modes, -self.half_modes])
        self.polarizations = np.array([_polarizations(k) for k in self.half_modes])
        self._index = {tuple(k): i for i, k in enumerate(self.modes)}

    @property
    def n_half(self) -> int:
        return len(self.half_modes)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def n_pol(self) -> int:
        return self.d - 1

    @property
    def dim(self) -> int:
        """Number of real coordinates, ``(d-1) * n_modes``."""
        return 2 * self.n_pol * self.n_half

    def __eq__(self, other):
        return isinstance(other, TorusBasis) and (self.d, self.K) == (other.d, other.K)

    def __hash__(self):
        return hash((self.d, self.K))

    def __repr__(self):
        return f"TorusBasis(d={self.d}, K={self.K})"

    def mode_index(self, k) -> int:
        try:
            return self._index[tuple(int(x) for x in k)]
        except KeyError:
            raise IndexError(f"mode {tuple(k)} is not in the basis") from None

    def coord_index(self, k, pol: int, part: str = "cos") -> int:
        """Coordinate of ``sqrt2 cos(k.x) e_pol`` (or ``sin``) for a positive-half ``k``."""
        i = self.mode_index(k)
        if i >= self.n_half:
            raise IndexError(f"mode {tuple(k)} is not in the positive half")
        return 2 * (self.n_pol * i + pol) + (0 if part == "cos" else 1)

    def coord_modes(self, coords) -> np.ndarray:
        """Half-mode index for each coordinate."""
        return np.asarray(coords) // (2 * self.n_pol)

    @cached_property
    def coord_wavevectors(self) -> np.ndarray:
        return np.repeat(self.half_modes, 2 * self.n_pol, axis=0)

    @cached_property
    def k_squared(self) -> np.ndarray:
        """``|k|^2`` per coordinate."""
        return np.sum(self.coord_wavevectors.astype(float) ** 2, axis=1)

    @cached_property
    def synthesis(self) -> np.ndarray:
        """Complex map ``R`` with ``u_hat[k] = R[k] @ coords``, shape (n_modes, d, dim)."""
        h, p = self.n_half, self.n_pol
        R = np.zeros((2 * h, self.d, self.dim), dtype=complex)
        for i in range(h):
            for a in range(p):
                e = self.polarizations[i, a] / _SQRT2
                c = 2 * (p * i + a)
                R[i, :, c] = e
                R[h + i, :, c] = e
                R[i, :, c + 1] = -1j * e
                R[h + i, :, c + 1] = 1j * e
        return R

    def to_fourier(self, coords) -> np.ndarray:
        """Complex Fourier coefficients ``(n_modes, d)`` of a coordinate vector."""
        return np.einsum("mdn,n->md", self.synthesis, np.asarray(coords, dtype=float))

    def from_fourier(self, uhat) -> np.ndarray:
        """Coordinates of the divergence-free, real part of ``uhat``."""
        uhat = np.asarray(uhat, dtype=complex)
        return np.real(np.einsum("mdn,md->n", self.synthesis.conj(), uhat))

    def evaluate(self, coords, x) -> np.ndarray:
        """Physical velocity at points ``x`` of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        uhat = self.to_fourier(coords)
        phase = np.exp(1j * x @ self.modes.T)
        return np.real(phase @ uhat)

    @cached_property
    def trilinear(self) -> TrilinearForm:
        """Sparse coordinate tensor of ``b``: ``b(u, v)_c = sum T[c,a,b] u_a v_b``."""
        return _build_trilinear(self)

    def to_json(self) -> str:
        return json.dumps({"d": self.d, "K": self.K})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else text
        return cls(int(d["d"]), int(d["K"]))


def _build_trilinear(basis: TorusBasis) -> TrilinearForm:
    # b_hat(k) = -P_k sum_{p+q=k} (u_hat(p) . i q) v_hat(q); P_k drops out
    # because the test coordinates are already orthogonal to k.
    modes = basis.modes
    n, h, npol = basis.n_modes, basis.n_half, basis.n_pol
    w = 2 * npol
    R = basis.synthesis
    half = np.arange(n) % h
    sub = np.stack([R[m][:, w * half[m]: w * half[m] + w] for m in range(n)])  # (n, d, w)
    ps, qs, ks = [], [], []
    for ip in range(n):
        s = modes[ip] + modes
        for iq in range(n):
            j = basis._index.get(tuple(s[iq]))
            if j is not None:
                ps.append(ip)
                qs.append(iq)
                ks.append(j)
    ps, qs, ks = map(np.asarray, (ps, qs, ks))
    adv = np.einsum("pda,pd->pa", sub[ps], 1j * modes[qs])
    proj = np.einsum("pdc,pdb->pcb", sub[ks].conj(), sub[qs])
    vals = -np.real(adv[:, None, :, None] * proj[:, :, None, :])  # (P, c, a, b)
    off = np.arange(w)
    ci = (w * half[ks])[:, None, None, None] + off[None, :, None, None]
    ai = (w * half[ps])[:, None, None, None] + off[None, None, :, None]
    bi = (w * half[qs])[:, None, None, None] + off[None, None, None, :]
    shape = vals.shape
    N = basis.dim
    flat = np.ravel_multi_index(
        (np.broadcast_to(ci, shape).ravel(), np.broadcast_to(ai, shape).ravel(),
         np.broadcast_to(bi, shape).ravel()), (N, N, N))
    key, inv = np.unique(flat, return_inverse=True)
    acc = np.bincount(inv, weights=vals.ravel(), minlength=key.size)
    c, a, b = np.unravel_index(key, (N, N, N))
    # enforce the exact cancellation <b(u,v),v> = 0: antisymmetrize in (c, b)
    swapped = np.ravel_multi_index((b, a, c), (N, N, N))
    pos = np.searchsorted(key, swapped)
    pos = np.minimum(pos, key.size - 1)
    partner = np.where(key[pos] == swapped, acc[pos], 0.0)
    acc = 0.5 * (acc - partner)
    keep = np.abs(acc) > 1e-14
    return TrilinearForm(c[keep], a[keep], b[keep], acc[keep], N)


@dataclass(frozen=True)
class FluidConfig:
    """Viscosity and Sobolev metadata for the fluid model.

    ``theta0`` and ``sigma`` are kept as metadata.  Values outside the
    range needed in the continuum theory trigger a warning only, since all
    norms are equivalent after truncation.
    """

    nu: float = 1.0
    n: float = 0.0
    theta0: float = 3.0
    sigma: float = 4.0
    d: int = 3

    def __post_init__(self):
        if not self.nu > 0:
            raise InputError(f"viscosity must be positive, got {self.nu}")
        if self.theta0 <= self.d / 2 + 1:
            warnings.warn(f"theta0={self.theta0} <= d/2 + 1; ignored in the truncated model",
                          stacklevel=2)
        if self.sigma <= 2 + self.d / 2:
            warnings.warn(f"sigma={self.sigma} <= 2 + d/2; ignored in the truncated model",
                          stacklevel=2)


class VelocityField:
    """Divergence-free zero-mean field in the polarization coordinates."""

    __slots__ = ("basis", "coefficients")

    def __init__(self, basis: TorusBasis, coefficients):
        c = np.array(coefficients, dtype=float)
        if c.shape != (basis.dim,):
            raise InputError(f"expected {basis.dim} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InputError("field has non-finite coefficients")
        c.setflags(write=False)
        self.basis = basis
        self.coefficients = c

    @classmethod
    def zeros(cls, basis):
        return cls(basis, np.zeros(basis.dim))

    @classmethod
    def single_mode(cls, basis, k, pol=0, part="cos", amplitude=1.0):
        c = np.zeros(basis.dim)
        c[basis.coord_index(k, pol, part)] = amplitude
        return cls(basis, c)

    def _check(self, other):
        if not isinstance(other, VelocityField) or other.basis != self.basis:
            raise InputError("fields live on different bases")

    def __add__(self, other):
        self._check(other)
        return VelocityField(self.basis, self.coefficients + other.coefficients)

    def __sub__(self, other):
        self._check(other)
        return VelocityField(self.basis, self.coefficients - other.coefficients)

    def __mul__(self, s):
        return VelocityField(self.basis, float(s) * self.coefficients)

    __rmul__ = __mul__

    def inner(self, other) -> float:
        self._check(other)
        return float(self.coefficients @ other.coefficients)

    def fourier(self) -> np.ndarray:
        return self.basis.to_fourier(self.coefficients)

    def divergence(self) -> np.ndarray:
        """``k . u_hat(k)`` per mode; zero up to rounding."""
        return np.einsum("md,md->m", self.basis.modes, self.fourier())

    def to_json(self) -> str:
        return json.dumps({"d": self.basis.d, "K": self.basis.K,
                           "coefficients": self.coefficients.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else text
        return cls(TorusBasis(int(d["d"]), int(d["K"])), d["coefficients"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["mode", "polarization", "coefficient"])
        b = self.basis
        for j, val in enumerate(self.coefficients):
            i, rest = divmod(j, 2 * b.n_pol)
            pol, part = divmod(rest, 2)
            mode = " ".join(str(x) for x in b.half_modes[i])
            wr.writerow([mode, f"{pol}{'cs'[part]}", repr(float(val))])
        return buf.getvalue()


def leray_project(basis: TorusBasis, uhat) -> VelocityField:
    """Divergence-free part of raw Fourier coefficients ``uhat`` (n_modes, d).

    A dict ``{k: vector}`` is also accepted; missing modes are zero.
    """
    if isinstance(uhat, dict):
        arr = np.zeros((basis.n_modes, basis.d), dtype=complex)
        for k, vec in uhat.items():
            arr[basis.mode_index(k)] = vec
        uhat = arr
    uhat = np.asarray(uhat, dtype=complex)
    if uhat.shape != (basis.n_modes, basis.d):
        raise IndexError(f"expected coefficients of shape {(basis.n_modes, basis.d)}, "
                         f"got {uhat.shape}")
    # from_fourier pairs with polarizations orthogonal to k, which is P_k
    return VelocityField(basis, basis.from_fourier(uhat))


def nonlinearity_b(u: VelocityField, v: VelocityField) -> VelocityField:
    """``-P(u . grad v)`` truncated to the basis."""
    u._check(v)
    out = u.basis.trilinear.apply(u.coefficients, v.coefficients)
    return VelocityField(u.basis, out)


def sobolev_weights(basis: TorusBasis, n: float, nu: float = 1.0) -> np.ndarray:
    """Per-coordinate weights ``(nu |k|^2)^(n/2)``."""
    return (nu * basis.k_squared) ** (0.5 * n)


def sobolev_norm(u: VelocityField, n: float, nu: float = 1.0) -> float:
    """``|| (-A)^(n/2) u ||`` with ``A = nu Laplacian``."""
    return float(np.linalg.norm(sobolev_weights(u.basis, n, nu) * u.coefficients))


def stokes_operator(basis: TorusBasis, nu: float = 1.0) -> LinearOperator:
    """Diagonal ``A = nu P Laplacian`` in the coordinates."""
    if not nu > 0:
        raise InputError(f"viscosity must be positive, got {nu}")
    return LinearOperator(np.diag(-nu * basis.k_squared))


def build_C_operator(basis: TorusBasis, rho: float = 1.0, varsigma: float = 0.0,
                     K_perturbation=None, nu: float = 1.0) -> LinearOperator:
    """Fast generator ``-rho (-A)^varsigma + K`` on the coordinates.

    Raises
    ------
    AssumptionViolationError
        If the perturbation destroys decay or coercivity.
    """
    if not rho > 0:
        raise InputError(f"rho must be positive, got {rho}")
    if varsigma < 0:
        raise InputError(f"varsigma must be nonnegative, got {varsigma}")
    c = np.diag(-rho * (nu * basis.k_squared) ** varsigma)
    if K_perturbation is not None:
        kp = as_matrix(K_perturbation)
        if kp.shape != c.shape:
            raise InputError(f"perturbation shape {kp.shape} does not match {c.shape}")
        c = c + kp
    g = validate_generator(c)
    return LinearOperator(c, iota=g.iota, gamma=g.gamma)

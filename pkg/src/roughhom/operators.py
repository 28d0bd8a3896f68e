"""Dense operator algebra on a finite state space.

Everything here works with plain ``numpy`` matrices wrapped in small
immutable containers.  Two-tensors use the storage convention
``(a ⊗ b)[k, l] = a[k] * b[l]`` throughout the package; the pairing
``<T, e_k ⊗ e_l> = <X e_k, e_l>`` therefore means ``entries = X.T``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    AssumptionViolationError,
    InputError,
    InvalidOperatorError,
    StabilityError,
)

__all__ = [
    "LinearOperator",
    "GeneratorAssumptions",
    "Tensor2",
    "as_matrix",
    "matrix_exponential",
    "solve_lyapunov",
    "correction_M",
    "drift_tensor_D",
    "ito_stratonovich_corrector",
    "validate_generator",
]

# above this size the Kronecker system (dim**2 unknowns) is too slow
KRON_MAX_DIM = 32


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LinearOperator:
    """Square real matrix with optional generator metadata."""

    entries: np.ndarray
    iota: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidOperatorError(f"operator must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidOperatorError("operator has non-finite entries")
        object.__setattr__(self, "entries", _frozen(a))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __matmul__(self, other):
        return np.asarray(self.entries) @ np.asarray(other)

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "entries": self.entries.ravel().tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else text
        n = int(d["dim"])
        a = np.asarray(d["entries"], dtype=float)
        if a.size != n * n:
            raise InvalidOperatorError(f"expected {n * n} entries, got {a.size}")
        return cls(a.reshape(n, n))


@dataclass(frozen=True)
class GeneratorAssumptions:
    """Quantities certifying that ``C`` is an admissible fast generator.

    ``iota`` is the exponential decay rate (minus the spectral abscissa),
    ``gamma`` the coercivity proxy ``λ_min(Sym(-C))``.  ``vartheta`` is
    carried as metadata only.
    """

    iota: float
    gamma: float
    vartheta: float = 1.0

    def __post_init__(self):
        if not self.iota > 0:
            raise AssumptionViolationError(f"decay rate iota={self.iota} must be > 0")
        if not self.gamma >= 0:
            raise AssumptionViolationError(f"coercivity gamma={self.gamma} must be >= 0")
        if not 0 < self.vartheta <= 1:
            raise AssumptionViolationError(f"vartheta={self.vartheta} must lie in (0, 1]")


@dataclass(frozen=True)
class Tensor2:
    """Element of E ⊗ E stored as ``entries[k, l] = <T, e_k ⊗ e_l>``."""

    entries: np.ndarray = field()

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidOperatorError(f"tensor must be square, got shape {a.shape}")
        object.__setattr__(self, "entries", _frozen(a))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def operator(self) -> np.ndarray:
        """Matrix ``X`` with ``<T, e_k ⊗ e_l> = <X e_k, e_l>``."""
        return self.entries.T

    @classmethod
    def from_operator(cls, x):
        return cls(np.asarray(x, dtype=float).T)

    @classmethod
    def outer(cls, a, b):
        return cls(np.outer(a, b))

    def sym(self) -> np.ndarray:
        return 0.5 * (self.entries + self.entries.T)

    def antisym(self) -> np.ndarray:
        return 0.5 * (self.entries - self.entries.T)

    def hs_norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "entries": self.entries.ravel().tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, str) else text
        n = int(d["dim"])
        return cls(np.asarray(d["entries"], dtype=float).reshape(n, n))


def as_matrix(op) -> np.ndarray:
    """Return a finite float matrix from a LinearOperator or array-like."""
    if isinstance(op, LinearOperator):
        return op.entries
    a = np.asarray(op, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidOperatorError(f"operator must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidOperatorError("operator has non-finite entries")
    return a


def matrix_exponential(C, t: float = 1.0) -> LinearOperator:
    """Semigroup ``e^{C t}`` for ``t >= 0``."""
    c = as_matrix(C)
    if t < 0:
        raise InputError(f"t must be nonnegative, got {t}")
    if t == 0:
        return LinearOperator(np.eye(c.shape[0]))
    return LinearOperator(scipy.linalg.expm(c * t))


def spectral_abscissa(C) -> float:
    return float(np.max(np.linalg.eigvals(as_matrix(C)).real))


def _check_stable(c):
    a = spectral_abscissa(c)
    if a >= 0:
        raise StabilityError(f"generator is not stable: spectral abscissa {a:.3g} >= 0")


def _check_covariance(q):
    scale = max(np.abs(q).max(), 1.0)
    if np.abs(q - q.T).max() > 1e-12 * scale:
        raise InputError("covariance Q must be symmetric")
    lam = np.linalg.eigvalsh(0.5 * (q + q.T))
    if lam.size and lam.min() < -1e-12 * scale:
        raise InputError(f"covariance Q must be positive semidefinite (min eig {lam.min():.3g})")


def _lyapunov_kron(c, q):
    # (I ⊗ C + C ⊗ I) vec(X) = -vec(Q), column-major vec
    n = c.shape[0]
    eye = np.eye(n)
    big = np.kron(eye, c) + np.kron(c, eye)
    x = np.linalg.solve(big, -q.reshape(-1, order="F"))
    return x.reshape(n, n, order="F")


def solve_lyapunov(C, Q, method: str = "auto") -> LinearOperator:
    """Stationary covariance ``Q∞`` solving ``C X + X Cᵀ + Q = 0``.

    Parameters
    ----------
    C, Q : LinearOperator or array_like
        Stable generator and symmetric PSD covariance.
    method : {"auto", "kron", "schur"}
        ``kron`` solves the vectorized dense system directly, ``schur``
        uses Bartels-Stewart.  ``auto`` picks ``kron`` for small
        dimensions.

    Returns
    -------
    LinearOperator
        Symmetrized solution.
    """
    c, q = as_matrix(C), as_matrix(Q)
    if c.shape != q.shape:
        raise InvalidOperatorError(f"shape mismatch {c.shape} vs {q.shape}")
    _check_covariance(q)
    _check_stable(c)
    if method == "auto":
        method = "kron" if c.shape[0] <= KRON_MAX_DIM else "schur"
    if method == "kron":
        x = _lyapunov_kron(c, q)
    elif method == "schur":
        x = scipy.linalg.solve_continuous_lyapunov(c, -q)
    else:
        raise InputError(f"unknown method {method!r}")
    return LinearOperator(0.5 * (x + x.T))


def _inverse_neg(c):
    return np.linalg.inv(-c)


def drift_tensor_D(C, Q, q_inf=None) -> Tensor2:
    """Per-unit-time drift ``∫ w ⊗ (-C)^{-1} w dμ(w)`` of the Itô limit lift."""
    c = as_matrix(C)
    if q_inf is None:
        q_inf = solve_lyapunov(c, Q)
    g = _inverse_neg(c)
    return Tensor2.from_operator(g @ as_matrix(q_inf))


def correction_M(C, Q, q_inf=None) -> Tensor2:
    """Antisymmetric deviation of the limit lift from the Stratonovich lift."""
    d = drift_tensor_D(C, Q, q_inf).entries
    return Tensor2(0.5 * (d - d.T))


def ito_stratonovich_corrector(C, Q) -> np.ndarray:
    """``½ (-C)^{-1} Q ((-C)^{-1})ᵀ``, the covariance rate of B over two."""
    c = as_matrix(C)
    g = _inverse_neg(c)
    return 0.5 * g @ as_matrix(Q) @ g.T


def validate_generator(C, Q=None, vartheta: float = 1.0) -> GeneratorAssumptions:
    """Check decay and coercivity of ``C``.

    Raises
    ------
    AssumptionViolationError
        If ``C`` is unstable (``iota <= 0``) or ``Sym(-C)`` is not
        positive definite.
    """
    c = as_matrix(C)
    if Q is not None:
        q = as_matrix(Q)
        if q.shape != c.shape:
            raise InvalidOperatorError(f"shape mismatch {c.shape} vs {q.shape}")
    iota = -spectral_abscissa(c)
    if iota <= 0:
        raise AssumptionViolationError(
            f"exponential decay violated: need iota > 0, got {iota:.3g}")
    gamma = float(np.linalg.eigvalsh(-0.5 * (c + c.T)).min())
    if gamma <= 0:
        raise AssumptionViolationError(
            f"coercivity violated: need -<w, Cw> > 0, got lambda_min(Sym(-C)) = {gamma:.3g}")
    return GeneratorAssumptions(iota=iota, gamma=gamma, vartheta=vartheta)

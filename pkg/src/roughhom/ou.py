"""Exact simulation of the fast Ornstein-Uhlenbeck component.

The fast process solves ``dw = eps^-1 C w dt + eps^-1/2 Q^1/2 dW``.  Each
step draws the new state together with the Brownian increment from their
exact joint Gaussian law, so limit objects built from ``W`` are coupled to
the simulated ``w`` path.

Random numbers are keyed by ``(seed, replica, chunk)`` with a fixed chunk
of :data:`CHUNK` steps.  The normals of step ``k`` therefore do not depend
on ``eps``, on the batch size or on the order in which replicas run.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import GridError, InputError, StabilityError
from .operators import LinearOperator, as_matrix, solve_lyapunov, spectral_abscissa

__all__ = [
    "CHUNK",
    "FastPath",
    "NoiseConfig",
    "OUStep",
    "psd_sqrt",
    "normals",
    "ou_exact_step",
    "simulate_fast_path",
    "simulate_fast_batch",
    "sample_invariant",
    "rescale_time",
]

CHUNK = 256
_STEP_TAG = 0
_INIT_TAG = 1


def psd_sqrt(S, name="matrix") -> np.ndarray:
    """Symmetric square root of a PSD matrix.

    Eigenvalues in ``[-1e-12 * scale, 0)`` are clamped to zero with a
    warning; anything more negative is an error.
    """
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    scale = max(float(np.abs(lam).max(initial=0.0)), 1e-300)
    if lam.size and lam.min() < -1e-12 * max(scale, 1.0):
        raise InputError(f"{name} is indefinite (min eigenvalue {lam.min():.3g})")
    if lam.size and lam.min() < 0:
        if lam.min() < -1e-14 * scale:
            warnings.warn(f"clamped negative eigenvalues of {name} to zero", RuntimeWarning,
                          stacklevel=2)
        lam = np.clip(lam, 0.0, None)
    return (V * np.sqrt(lam)) @ V.T


def _generator(seed, replica, chunk, tag=_STEP_TAG):
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(replica), int(chunk), tag])
    return np.random.Generator(np.random.Philox(ss))


def normals(seed: int, replica: int, start: int, n_steps: int, dim: int) -> np.ndarray:
    """Standard normals of shape ``(n_steps, 2, dim)`` for steps ``start..``.

    Slot 0 drives the Brownian increment, slot 1 the residual of the OU
    step.
    """
    out = np.empty((n_steps, 2, dim))
    k = start
    end = start + n_steps
    while k < end:
        chunk, off = divmod(k, CHUNK)
        block = _generator(seed, replica, chunk).standard_normal((CHUNK, 2, dim))
        take = min(CHUNK - off, end - k)
        out[k - start:k - start + take] = block[off:off + take]
        k += take
    return out


@dataclass(frozen=True)
class NoiseConfig:
    Q: LinearOperator
    seed: int = 0
    replica: int = 0

    def __post_init__(self):
        q = as_matrix(self.Q)
        if np.abs(q - q.T).max() > 1e-12 * max(np.abs(q).max(), 1.0):
            raise InputError("covariance Q must be symmetric")
        if np.linalg.eigvalsh(q).min() < -1e-12 * max(np.abs(q).max(), 1.0):
            raise InputError("covariance Q must be positive semidefinite")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")


class OUStep:
    """Precomputed exact one-step law for step ``h`` at scale ``eps``.

    With ``Z1, Z2`` standard normal,

        dW  = Q^1/2 sqrt(h) Z1
        new = E state + K Z1 + L Z2

    where ``K = Cov(xi, Z1)`` and ``L L^T = Sigma_h - K K^T``.
    """

    def __init__(self, C, Q, epsilon: float, h: float, q_inf=None):
        c, q = as_matrix(C), as_matrix(Q)
        if not h > 0:
            raise InputError(f"step must be positive, got {h}")
        if not 0 < epsilon <= 1:
            raise InputError(f"epsilon must lie in (0, 1], got {epsilon}")
        if spectral_abscissa(c) >= 0:
            raise StabilityError("generator is not stable")
        self.h, self.epsilon = float(h), float(epsilon)
        self.E = scipy.linalg.expm(c * (h / epsilon))
        qinf = as_matrix(q_inf) if q_inf is not None else solve_lyapunov(c, q).entries
        sigma = qinf - self.E @ qinf @ self.E.T
        self.q_half = psd_sqrt(q, "Q")
        # eps^-1/2 int_0^h e^{Cs/eps} ds Q^1/2 = eps^1/2 C^-1 (E - I) Q^1/2
        cross = np.sqrt(epsilon) * np.linalg.solve(c, self.E - np.eye(len(c))) @ self.q_half
        self.K = cross / np.sqrt(h)
        self.L = psd_sqrt(sigma - self.K @ self.K.T, "residual step covariance")
        self.sigma = 0.5 * (sigma + sigma.T)
        self.dw_scale = np.sqrt(h) * self.q_half

    def apply(self, state, z):
        """Advance ``state`` (..., dim) with normals ``z`` (..., 2, dim)."""
        z1, z2 = z[..., 0, :], z[..., 1, :]
        new = state @ self.E.T + z1 @ self.K.T + z2 @ self.L.T
        return new, z1 @ self.dw_scale.T


@lru_cache(maxsize=64)
def _cached_step(key):
    c, q, eps, h = key
    n = int(round(len(c) ** 0.5))
    return OUStep(np.array(c).reshape(n, n), np.array(q).reshape(n, n), eps, h)


def _step_for(C, Q, eps, h):
    c, q = as_matrix(C), as_matrix(Q)
    return _cached_step((tuple(c.ravel()), tuple(q.ravel()), float(eps), float(h)))


def ou_exact_step(state, C, Q, epsilon, h, rng: np.random.Generator):
    """One exact step of the fast process.

    Returns
    -------
    new_state : ndarray
    dW : ndarray
        The increment ``Q^1/2 (W_{t+h} - W_t)`` drawn jointly with the
        step.
    """
    if h < 0:
        raise InputError(f"step must be nonnegative, got {h}")
    state = np.asarray(state, dtype=float)
    if h == 0:
        return state.copy(), np.zeros_like(state)
    st = _step_for(C, Q, epsilon, h)
    z = rng.standard_normal((2, state.shape[-1]))
    return st.apply(state, z)


@dataclass
class FastPath:
    """Sampled fast path with the Brownian increments that produced it.

    ``w`` has shape (n+1, dim) and ``dW`` shape (n, dim), where ``dW`` holds
    ``Q^1/2`` times the Wiener increments.
    """

    epsilon: float
    times: np.ndarray
    w: np.ndarray
    dW: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise GridError("time grid must be strictly increasing")
        n = self.times.size - 1
        if self.w.shape[0] != n + 1 or self.dW.shape[0] != n:
            raise GridError("path arrays do not match the grid")

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    @property
    def W(self) -> np.ndarray:
        """Cumulative ``Q^1/2 W`` on the grid, starting at zero."""
        return np.concatenate([np.zeros((1, self.dim)), np.cumsum(self.dW, axis=0)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        d = self.dim
        wr.writerow(["t"] + [f"w{i}" for i in range(d)] + [f"dW{i}" for i in range(d)])
        dW = np.vstack([self.dW, np.full((1, d), np.nan)])
        for t, w, b in zip(self.times, self.w, dW):
            wr.writerow([repr(float(t))] + [repr(float(x)) for x in w]
                        + ["" if np.isnan(x) else repr(float(x)) for x in b])
        return buf.getvalue()

    def to_json(self) -> str:
        def enc(a):
            a = np.ascontiguousarray(a, dtype="<f8")
            return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode()}
        return json.dumps({"epsilon": self.epsilon, "times": enc(self.times),
                           "w": enc(self.w), "dW": enc(self.dW)}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)

        def dec(x):
            return np.frombuffer(base64.b64decode(x["data"]), dtype="<f8").reshape(x["shape"]).copy()
        return cls(float(d["epsilon"]), dec(d["times"]), dec(d["w"]), dec(d["dW"]))


def _uniform_step(times):
    dt = np.diff(times)
    if np.any(dt <= 0):
        raise GridError("time grid must be strictly increasing")
    if np.ptp(dt) > 1e-9 * dt.max():
        return None
    return float(dt.mean())


def simulate_fast_batch(C, Q, epsilon, times, seed, replicas, w0=None, z=None):
    """Simulate several replicas on a uniform grid.

    ``z`` may carry pre-drawn normals ``(R, n, 2, dim)`` so that one draw
    serves a whole epsilon ladder.  Returns ``(w, dW)`` of shapes
    ``(R, n+1, dim)`` and ``(R, n, dim)``.
    """
    c = as_matrix(C)
    times = np.asarray(times, dtype=float)
    h = _uniform_step(times)
    if h is None:
        raise GridError("batched simulation needs a uniform grid")
    replicas = list(replicas)
    n, dim = times.size - 1, c.shape[0]
    st = _step_for(c, Q, epsilon, h)
    if z is None:
        z = np.stack([normals(seed, r, 0, n, dim) for r in replicas])
    w = np.empty((len(replicas), n + 1, dim))
    dW = np.empty((len(replicas), n, dim))
    w[:, 0] = 0.0 if w0 is None else w0
    for k in range(n):
        w[:, k + 1], dW[:, k] = st.apply(w[:, k], z[:, k])
    return w, dW


def simulate_fast_path(C, Q, epsilon, grid, seed, replica: int = 0, w0=None) -> FastPath:
    """Exact-in-law path of the fast process on ``grid``.

    Deterministic in ``(seed, replica)``.  Nonuniform grids are allowed.
    """
    c = as_matrix(C)
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise GridError("grid needs at least two points")
    n, dim = times.size - 1, c.shape[0]
    z = normals(seed, replica, 0, n, dim)
    w = np.empty((n + 1, dim))
    dW = np.empty((n, dim))
    w[0] = 0.0 if w0 is None else np.asarray(w0, dtype=float)
    dt = np.diff(times)
    if np.any(dt <= 0):
        raise GridError("time grid must be strictly increasing")
    steps = {}
    for k in range(n):
        st = steps.get(dt[k])
        if st is None:
            st = steps[dt[k]] = _step_for(c, Q, epsilon, float(dt[k]))
        w[k + 1], dW[k] = st.apply(w[k], z[k])
    return FastPath(float(epsilon), times, w, dW)


def sample_invariant(C, Q, rng=None, size=None, *, seed=None, replica=0) -> np.ndarray:
    """Draw from the invariant law ``N(0, Q_inf)``.

    Either pass a Generator ``rng`` or a ``seed``/``replica`` pair, which
    uses the dedicated initial-state stream of that replica.
    """
    qinf = solve_lyapunov(C, Q).entries
    root = psd_sqrt(qinf, "Q_inf")
    if rng is None:
        rng = _generator(0 if seed is None else seed, replica, 0, _INIT_TAG)
    shape = (root.shape[0],) if size is None else (size, root.shape[0])
    return rng.standard_normal(shape) @ root.T


def rescale_time(path: FastPath) -> FastPath:
    """The process ``w~_t = w_{eps t}`` on the stretched grid (law at eps = 1).

    Increments are rescaled by ``eps^-1/2`` so they stay those of a
    standard ``Q``-Wiener process in the new clock.
    """
    e = path.epsilon
    return FastPath(1.0, path.times / e, path.w.copy(), path.dW / np.sqrt(e))

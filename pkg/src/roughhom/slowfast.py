"""Slow-fast Galerkin fluid system, its rough driver and the limit solver.

State variables on the coordinate space of a :class:`~roughhom.fluid.TorusBasis`:

    u' = A u + b(u + eps^-1/2 w + r, u)                       slow
    dw = eps^-1 C w dt + eps^-1/2 Q^1/2 dW                      fast
    r' = eps^-1 C r + A(eps^-1/2 w + r) + b(u + v, v)           corrector

with ``v = eps^-1/2 w + r``.  The noise acts on a subspace ``S`` (rows of
``Q`` that are not identically zero).  When ``C`` leaves ``S`` invariant
the fast process and all lifts live on ``S`` only, which keeps the rough
driver cheap.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DivergenceError, GridError, InputError
from .fluid import TorusBasis, VelocityField, sobolev_weights
from .operators import as_matrix, solve_lyapunov, validate_generator
from .ou import OUStep, normals
from .roughpath import (
    RoughPath,
    TwoIndexMap,
    canonical_lift,
    holder_seminorm,
)

__all__ = [
    "EPS_MIN",
    "FastSlowState",
    "RoughSolveConfig",
    "SlowFastModel",
    "Trajectory",
    "DriverPair",
    "integrate_slow_fast",
    "integrate_batch",
    "simulate_noise",
    "assemble_driver",
    "driver_norm_bounds",
    "compute_remainder",
    "remainder_scaling",
    "rough_euler_limit",
    "ito_stokes_estimate",
    "ito_stokes_oracle",
    "loglog_fit",
]

EPS_MIN = 2.0**-12
BLOWUP = 1e3


@dataclass(frozen=True)
class FastSlowState:
    time: float
    u: VelocityField
    w: VelocityField
    r: VelocityField
    epsilon: float

    @property
    def v(self) -> VelocityField:
        """The original fast velocity ``eps^-1/2 w + r``."""
        return self.w * self.epsilon**-0.5 + self.r


@dataclass(frozen=True)
class RoughSolveConfig:
    alpha: float = 0.4
    level: int = 6
    tolerance: float = 1e-8

    def __post_init__(self):
        if not 1 / 3 < self.alpha < 1 / 2:
            raise InputError(f"alpha must lie in (1/3, 1/2), got {self.alpha}")

    @property
    def p(self) -> float:
        return 1.0 / self.alpha


def _phi1(L, h):
    """``e^{hL}`` and ``h phi_1(hL)`` from one augmented exponential."""
    n = L.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = h * L
    aug[:n, n:] = h * np.eye(n)
    E = scipy.linalg.expm(aug)
    return E[:n, :n], E[:n, n:]


class SlowFastModel:
    """Operators of the coupled system on one basis.

    Parameters
    ----------
    basis : TorusBasis
    C, Q : array_like
        Fast generator and noise covariance on the full coordinate space.
    nu : float
        Viscosity in ``A = nu P Laplacian``.
    nonlinear : bool
        ``False`` switches ``b`` off everywhere (linear Stokes test case).
    """

    def __init__(self, basis: TorusBasis, C, Q, nu: float = 1.0, nonlinear: bool = True):
        self.basis = basis
        self.N = basis.dim
        self.C = as_matrix(C)
        self.Q = as_matrix(Q)
        if self.C.shape != (self.N, self.N) or self.Q.shape != (self.N, self.N):
            raise InputError(f"C and Q must be {self.N} x {self.N}")
        self.assumptions = validate_generator(self.C, self.Q)
        self.nu = float(nu)
        self.A = -self.nu * basis.k_squared
        self.nonlinear = bool(nonlinear)
        S = np.flatnonzero(np.any(self.Q != 0, axis=1))
        rest = np.setdiff1d(np.arange(self.N), S)
        if S.size == 0 or np.any(self.C[np.ix_(rest, S)] != 0):
            S = np.arange(self.N)
        self.S = S
        self.C_S = self.C[np.ix_(S, S)]
        self.Q_S = self.Q[np.ix_(S, S)]
        self.G = np.linalg.inv(-self.C)
        self.G_S = np.linalg.inv(-self.C_S)
        self._full = basis.trilinear if self.nonlinear else None
        self._rough = self._full.restrict(a_set=S) if self.nonlinear else None
        self._steps = {}

    @property
    def q_inf_S(self):
        return solve_lyapunov(self.C_S, self.Q_S).entries

    def embed(self, x_S):
        x_S = np.asarray(x_S, dtype=float)
        out = np.zeros(x_S.shape[:-1] + (self.N,))
        out[..., self.S] = x_S
        return out

    def b(self, u, v):
        if not self.nonlinear:
            return np.zeros(np.broadcast_shapes(np.shape(u), np.shape(v)))
        return self._full.apply(u, v)

    def b_rough(self, y_full, u):
        """``b(y, u)`` for ``y`` supported on the noise subspace."""
        if not self.nonlinear:
            return np.zeros_like(u)
        return self._rough.apply(y_full, u)

    def L_matrices(self) -> np.ndarray:
        """Dense ``L_a = b(e_a, .)`` for ``a`` in the noise subspace, shape (|S|, N, N)."""
        out = np.zeros((self.S.size, self.N, self.N))
        if self.nonlinear:
            for i, a in enumerate(self.S):
                e = np.zeros(self.N)
                e[a] = 1.0
                out[i] = self._rough.matrix(e)
        return out

    def steps(self, epsilon: float, h: float):
        key = (float(epsilon), float(h))
        if key not in self._steps:
            ou = OUStep(self.C_S, self.Q_S, epsilon, h)
            eA = np.exp(h * self.A)
            Er, Pr = _phi1(self.C / epsilon + np.diag(self.A), h)
            self._steps[key] = (ou, eA, Er, Pr)
        return self._steps[key]


@dataclass
class Trajectory:
    """Output of the coupled integrator for a batch of replicas.

    Arrays carry a leading replica axis: ``u`` and ``r`` are (R, n+1, N);
    ``w``, ``ydot`` and ``y`` are (R, n+1, |S|) on the noise subspace;
    ``drift`` holds the per-step drift increments (R, n, N).
    """

    epsilon: float
    times: np.ndarray
    u: np.ndarray
    r: np.ndarray
    w: np.ndarray
    y: np.ndarray
    ydot: np.ndarray
    drift: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    support: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def energy_violation(self) -> np.ndarray:
        """Per replica ``max_t (|u_t|² + dissipated - |u_0|²)_+``."""
        budget = self.energy + self.dissipation - self.energy[:, :1]
        return np.clip(budget.max(axis=1), 0.0, None)

    def state(self, basis, k: int, replica: int = 0) -> FastSlowState:
        emb = np.zeros(basis.dim)
        emb[self.support] = self.w[replica, k]
        return FastSlowState(float(self.times[k]), VelocityField(basis, self.u[replica, k]),
                             VelocityField(basis, emb), VelocityField(basis, self.r[replica, k]),
                             self.epsilon)

    def lift(self, level: int, replica: int = 0, alpha: float = 0.4) -> RoughPath:
        """Canonical lift of ``y`` (trapezoid rule, same as the integrator)."""
        T = float(self.times[-1] - self.times[0])
        return canonical_lift(self.y[replica], level, T, ydot=self.ydot[replica], alpha=alpha)

    def to_csv(self, replica: int = 0) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        N, S = self.u.shape[-1], self.w.shape[-1]
        wr.writerow(["t"] + [f"u{i}" for i in range(N)] + [f"w{i}" for i in range(S)]
                    + [f"r{i}" for i in range(N)])
        for k, t in enumerate(self.times):
            row = np.concatenate([self.u[replica, k], self.w[replica, k], self.r[replica, k]])
            wr.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        return buf.getvalue()


def _check_eps(epsilon):
    if not EPS_MIN <= epsilon <= 1:
        raise InputError(f"epsilon must lie in [2^-12, 1], got {epsilon}")


def _uniform(times):
    times = np.asarray(times, dtype=float)
    dt = np.diff(times)
    if times.ndim != 1 or dt.size == 0 or np.any(dt <= 0):
        raise GridError("time grid must be strictly increasing")
    if np.ptp(dt) > 1e-9 * dt.max():
        raise GridError("time grid must be uniform")
    return times, float(dt.mean())


def simulate_noise(model: SlowFastModel, epsilon, times, seed, replicas, w0=None):
    """Exact fast path on the noise subspace: ``(w, dW)`` with a replica axis."""
    _check_eps(epsilon)
    times, h = _uniform(times)
    replicas = list(replicas)
    n, s = times.size - 1, model.S.size
    ou = model.steps(epsilon, h)[0]
    z = np.stack([normals(seed, r, 0, n, s) for r in replicas])
    w = np.empty((len(replicas), n + 1, s))
    dW = np.empty((len(replicas), n, s))
    w[:, 0] = 0.0 if w0 is None else np.asarray(w0)[..., model.S]
    for k in range(n):
        w[:, k + 1], dW[:, k] = ou.apply(w[:, k], z[:, k])
    return w, dW


def integrate_batch(model: SlowFastModel, u0, epsilon, times, w, r0=None,
                    check_blowup=True) -> Trajectory:
    """Advance ``(u, r)`` along given fast samples ``w`` (R, n+1, |S|).

    One step of size ``h``:

        dy  = h/2 (ydot_n + ydot_{n+1}),       ydot = eps^-1/2 w
        u*  = u + h b(u + r, u) + b(dy, u) + h/2 b(ydot_{n+1}, b(dy, u))
        u'  = e^{hA} u*
        r'  = e^{hL} r + h phi1(hL) [A eps^-1/2 w + b(u + v, v)],  L = C/eps + A

    The two rough terms are the level-1 and level-2 driver of the
    trapezoid lift over the step.
    """
    _check_eps(epsilon)
    times, h = _uniform(times)
    w = np.asarray(w, dtype=float)
    R, n1, _ = w.shape
    n = n1 - 1
    if n != times.size - 1:
        raise GridError("fast samples do not match the grid")
    N = model.N
    _, eA, Er, Pr = model.steps(epsilon, h)
    u = np.empty((R, n + 1, N))
    r = np.empty((R, n + 1, N))
    drift = np.empty((R, n, N))
    diss = np.zeros((R, n + 1))
    u[:, 0] = np.broadcast_to(np.asarray(u0, dtype=float), (R, N))
    r[:, 0] = 0.0 if r0 is None else np.broadcast_to(np.asarray(r0, dtype=float), (R, N))
    ydot_S = w / np.sqrt(epsilon)
    y_S = np.concatenate([np.zeros((R, 1, w.shape[2])),
                          np.cumsum(0.5 * h * (ydot_S[:, 1:] + ydot_S[:, :-1]), axis=1)], axis=1)
    scale = BLOWUP * max(float(np.linalg.norm(u[:, 0], axis=1).max()), 1.0)
    one_minus = 1.0 - eA**2
    for k in range(n):
        uk, rk = u[:, k], r[:, k]
        yd = model.embed(ydot_S[:, k])
        yd1 = model.embed(ydot_S[:, k + 1])
        dy = 0.5 * h * (yd + yd1)
        nl = h * model.b(uk + rk, uk)
        a1 = model.b_rough(dy, uk)
        a2 = 0.5 * h * model.b_rough(yd1, a1)
        ustar = uk + nl + a1 + a2
        u[:, k + 1] = eA * ustar
        drift[:, k] = (eA - 1.0) * uk + eA * nl
        diss[:, k + 1] = diss[:, k] + np.sum(one_minus * ustar**2, axis=1)
        v = yd + rk
        forcing = model.A * yd + model.b(uk + v, v)
        r[:, k + 1] = rk @ Er.T + forcing @ Pr.T
        if check_blowup:
            big = np.linalg.norm(u[:, k + 1], axis=1)
            if not np.all(np.isfinite(big)) or big.max() > scale:
                raise DivergenceError(f"slow component blew up at t={times[k + 1]:.6g}",
                                      time=float(times[k + 1]))
    energy = np.sum(u**2, axis=2)
    rnorm2 = np.sum(r**2, axis=2)
    r_int = h * (rnorm2.sum(axis=1) - 0.5 * (rnorm2[:, 0] + rnorm2[:, -1]))
    diag = {"r_energy_integral": r_int}
    return Trajectory(float(epsilon), times, u, r, w, y_S, ydot_S, drift, energy, diss,
                      model.S, diag)


def integrate_slow_fast(model: SlowFastModel, u0, epsilon, times, seed, replica: int = 0,
                        r0=None, stride: int = 1) -> Trajectory:
    """Integrate one replica of the coupled system.

    The fast process is simulated exactly on ``times`` refined ``stride``
    times and then sampled on ``times``, so runs with different strides
    see the same Brownian path.
    """
    times, h = _uniform(times)
    if stride < 1:
        raise InputError("stride must be a positive integer")
    n = times.size - 1
    fine = np.linspace(times[0], times[-1], n * stride + 1)
    w, _ = simulate_noise(model, epsilon, fine, seed, [replica])
    return integrate_batch(model, u0, epsilon, times, w[:, ::stride], r0)


class DriverPair:
    """Operator-valued increments on the grid of a lift.

    ``A1[s, t] = sum_a Y¹_st[a] L_a`` and
    ``A2[s, t] = sum_{a, b} Y²_st[a, b] L_b L_a``; with this ordering Chen's
    relation for the lift gives ``A2_st - A2_sr - A2_rt = A1_rt A1_sr``.
    Matrices are formed on demand.
    """

    def __init__(self, lift: RoughPath, L: np.ndarray):
        if L.shape[0] != lift.dim:
            raise InputError(f"lift dimension {lift.dim} does not match {L.shape[0]} generators")
        self.lift = lift
        self.L = L
        self.N = L.shape[1]

    @property
    def times(self):
        return self.lift.times

    def A1(self, i, j) -> np.ndarray:
        return np.tensordot(self.lift.level1.values[i, j], self.L, axes=1)

    def A2(self, i, j) -> np.ndarray:
        Y2 = self.lift.level2.values[i, j]
        out = np.zeros((self.N, self.N))
        for b in range(self.L.shape[0]):
            if np.any(Y2[:, b]):
                out += self.L[b] @ np.tensordot(Y2[:, b], self.L, axes=1)
        return out

    def apply1(self, i, j, u):
        Lu = np.einsum("anm,...m->...an", self.L, u)
        return np.einsum("a,...an->...n", self.lift.level1.values[i, j], Lu)

    def apply2(self, i, j, u):
        Lu = np.einsum("anm,...m->...an", self.L, u)
        z = np.einsum("ab,...an->...bn", self.lift.level2.values[i, j], Lu)
        return np.einsum("bnm,...bm->...n", self.L, z)

    def chen_defect(self, max_triples: int = 64, seed: int = 0) -> float:
        """Relative max of ``|δA2_srt - A1_rt A1_sr|`` over grid triples."""
        m = self.times.size
        triples = [(s, r, t) for s in range(m) for r in range(s + 1, m) for t in range(r + 1, m)]
        if len(triples) > max_triples:
            rng = np.random.default_rng(seed)
            pick = rng.choice(len(triples), max_triples, replace=False)
            triples = [triples[i] for i in sorted(pick)]
        worst = 0.0
        for s, r, t in triples:
            lhs = self.A2(s, t) - self.A2(s, r) - self.A2(r, t)
            rhs = self.A1(r, t) @ self.A1(s, r)
            scale = max(np.linalg.norm(rhs), np.linalg.norm(self.A2(s, t)), 1e-300)
            worst = max(worst, float(np.linalg.norm(lhs - rhs) / scale))
        return worst


def assemble_driver(lift: RoughPath, model: SlowFastModel) -> DriverPair:
    """Unbounded rough driver of a lift on the noise subspace (or full space)."""
    if lift.dim == model.S.size:
        return DriverPair(lift, model.L_matrices())
    if lift.dim == model.N:
        L = np.zeros((model.N, model.N, model.N))
        if model.nonlinear:
            for a in range(model.N):
                e = np.zeros(model.N)
                e[a] = 1.0
                L[a] = model._full.matrix(e)
        return DriverPair(lift, L)
    raise InputError(f"lift dimension {lift.dim} matches neither {model.S.size} nor {model.N}")


def loglog_fit(x, y):
    """Least-squares line through ``(log x, log y)``; returns slope, intercept, r²."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ np.array([slope, icpt])
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), r2


def _sobolev_op_norm(M, w_in, w_out):
    # sup |M x|_{out} / |x|_{in} with |x|_n = |W_n x|
    return float(np.linalg.norm((w_out[:, None] * M) / w_in[None, :], 2))


def driver_norm_bounds(driver: DriverPair, basis: TorusBasis, alpha: float = 0.4,
                       indices=(0, 1, 2), nu: float = 1.0) -> dict:
    """Sobolev operator norms of the driver and fitted Hölder constants.

    ``A1`` is measured from ``H^-m`` to ``H^-(m+1)`` and ``A2`` from
    ``H^-m`` to ``H^-(m+2)``.  For each ``m`` the report gives the
    smallest ``c`` with ``|A1_st| <= c |t-s|^alpha`` (``2 alpha`` for
    ``A2``) over grid pairs and the fitted log-log exponent.
    """
    t = driver.times
    pairs = [(i, j) for i in range(t.size) for j in range(i + 1, t.size)]
    gaps = np.array([t[j] - t[i] for i, j in pairs])
    report = {"alpha": alpha, "levels": {}}
    mats1 = [driver.A1(i, j) for i, j in pairs]
    mats2 = [driver.A2(i, j) for i, j in pairs]
    for m in indices:
        w_in = sobolev_weights(basis, -m, nu)
        n1 = np.array([_sobolev_op_norm(M, w_in, sobolev_weights(basis, -(m + 1), nu))
                       for M in mats1])
        n2 = np.array([_sobolev_op_norm(M, w_in, sobolev_weights(basis, -(m + 2), nu))
                       for M in mats2])
        entry = {"A1_constant": float(np.max(n1 / gaps**alpha)),
                 "A2_constant": float(np.max(n2 / gaps ** (2 * alpha)))}
        for name, vals in (("A1", n1), ("A2", n2)):
            ok = vals > 0
            if ok.sum() >= 2 and np.ptp(np.log(gaps[ok])) > 0:
                entry[f"{name}_exponent"] = loglog_fit(gaps[ok], vals[ok])[0]
            else:
                entry[f"{name}_exponent"] = None
        report["levels"][str(m)] = entry
    return report


def compute_remainder(traj: Trajectory, driver: DriverPair, replica: int = 0) -> TwoIndexMap:
    """``u♮_st = δu - δμ - A1_st u_s - A2_st u_s`` on the driver grid."""
    t = driver.times
    n = traj.times.size - 1
    m = t.size - 1
    if n % m or not np.allclose(traj.times[:: n // m], t):
        raise GridError("trajectory grid does not refine the driver grid")
    step = n // m
    u = traj.u[replica, ::step]
    mu = np.concatenate([np.zeros((1, traj.u.shape[-1])),
                         np.cumsum(traj.drift[replica], axis=0)])[::step]
    du = u[None, :] - u[:, None]
    dmu = mu[None, :] - mu[:, None]
    vals = du - dmu
    for i in range(m + 1):
        Lu = driver.L @ u[i]  # (a, N)
        vals[i] -= np.einsum("ja,an->jn", driver.lift.level1.values[i], Lu)
        vals[i] -= _apply2_row(driver, Lu, i)
    mask = np.triu(np.ones((m + 1, m + 1), dtype=bool), 1)
    return TwoIndexMap(t, vals * mask[:, :, None])


def _apply2_row(driver, Lu, i):
    z = np.einsum("jab,an->jbn", driver.lift.level2.values[i], Lu)
    return np.einsum("bnm,jbm->jn", driver.L, z)


def remainder_scaling(rem: TwoIndexMap, basis: TorusBasis, norm_index: float = -3.0,
                      nu: float = 1.0, min_gap: int = 1) -> dict:
    """Log-log regression of ``sup_s |u♮_{s,s+h}|`` against ``h``.

    ``h`` runs over dyadic gaps ``2^j`` grid steps; norms are taken in
    ``H^norm_index``.
    """
    wts = sobolev_weights(basis, norm_index, nu)
    m = rem.n
    hs, sups = [], []
    g = min_gap
    while g <= m:
        idx = np.arange(0, m - g + 1, g)
        vals = rem.values[idx, idx + g] * wts
        hs.append(float(rem.times[g] - rem.times[0]))
        sups.append(float(np.linalg.norm(vals, axis=1).max()))
        g *= 2
    hs, sups = np.array(hs), np.array(sups)
    ok = sups > 0
    slope, icpt, r2 = loglog_fit(hs[ok], sups[ok]) if ok.sum() >= 2 else (np.nan, np.nan, np.nan)
    return {"gaps": hs.tolist(), "sup_norms": sups.tolist(), "exponent": slope,
            "intercept": icpt, "r2": r2}


def remainder_variation(rem: TwoIndexMap, p: float, basis=None, norm_index=-3.0, nu=1.0):
    """``p/3``-variation of the remainder in ``H^norm_index``."""
    vals = rem.values
    if basis is not None:
        vals = vals * sobolev_weights(basis, norm_index, nu)
    return holder_seminorm(TwoIndexMap(rem.times, vals), p / 3.0, mode="p-variation")


def rough_euler_limit(model: SlowFastModel, u0, lift: RoughPath | None, rbar, batch=None,
                      check_blowup=True, times=None) -> np.ndarray:
    """First-order rough step for the limit equation on the lift grid.

    ``u_{n+1} = e^{hA} (u_n + h [b(u_n, u_n) + b(rbar, u_n)] + A1 u_n + A2 u_n)``,
    which is ``δu = [Au + b(u,u) + b(rbar,u)] h + A1 u + A2 u`` to first
    order with the Stokes part integrated exactly.

    ``lift`` lives on the noise subspace.  ``batch`` optionally supplies
    per-replica level-1 / level-2 step increments ``(Y1 (R, m, |S|),
    Y2 (R, m, |S|, |S|))`` instead of a single lift; the result then has
    shape (R, m+1, N) and the grid comes from ``times`` when ``lift`` is None.
    """
    if batch is None:
        t = lift.times
        idx = np.arange(t.size - 1)
        Y1 = lift.level1.values[idx, idx + 1][None]
        Y2 = lift.level2.values[idx, idx + 1][None]
    else:
        Y1, Y2 = batch
        t = lift.times if lift is not None else times
    if t is None:
        raise InputError("a time grid is required")
    times, h = _uniform(t)
    R, m = Y1.shape[:2]
    N = model.N
    eA = np.exp(h * model.A)
    rbar = np.broadcast_to(np.asarray(rbar, dtype=float), (R, N))
    out = np.empty((R, m + 1, N))
    out[:, 0] = np.broadcast_to(np.asarray(u0, dtype=float), (R, N))
    scale = BLOWUP * max(float(np.linalg.norm(out[:, 0], axis=1).max()), 1.0)
    Sidx = model.S
    for k in range(m):
        uk = out[:, k]
        y1 = model.embed(Y1[:, k])
        a1 = model.b_rough(y1, uk)
        # A2 u = sum_b L_b (sum_a Y2[a, b] L_a u)
        a2 = np.zeros_like(uk)
        if model.nonlinear:
            for jb, b in enumerate(Sidx):
                col = Y2[:, k, :, jb]
                if np.any(col):
                    inner = model.b_rough(model.embed(col), uk)
                    e = np.zeros((R, N))
                    e[:, b] = 1.0
                    a2 += model.b_rough(e, inner)
        nl = h * (model.b(uk, uk) + model.b(rbar, uk))
        out[:, k + 1] = eA * (uk + nl + a1 + a2)
        if check_blowup:
            big = np.linalg.norm(out[:, k + 1], axis=1)
            if not np.all(np.isfinite(big)) or big.max() > scale:
                raise DivergenceError(f"limit solution blew up at t={times[k + 1]:.6g}",
                                      time=float(times[k + 1]))
    return out if batch is not None else out[0]


def ito_stokes_estimate(times, w, model: SlowFastModel) -> np.ndarray:
    """Trapezoid time average of ``(-C)^-1 b(w, w)`` along stored fast samples.

    ``w`` is (..., n+1, |S|) on the noise subspace or (..., n+1, N).
    Returns coordinates (..., N).
    """
    times = np.asarray(times, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape[-1] == model.S.size and model.S.size != model.N:
        w = model.embed(w)
    if not model.nonlinear:
        return np.zeros(w.shape[:-2] + (model.N,))
    lead = w.shape[:-2]
    flat = w.reshape((-1, model.N))
    bw = model._rough.apply(flat, flat).reshape(w.shape)
    dt = np.diff(times)
    avg = np.einsum("k,...kn->...n", 0.5 * dt, bw[..., 1:, :] + bw[..., :-1, :])
    avg /= times[-1] - times[0]
    return (avg.reshape((-1, model.N)) @ model.G.T).reshape(lead + (model.N,))


def ito_stokes_oracle(C, Q, basis: TorusBasis, nonlinear: bool = True) -> VelocityField:
    """Gaussian average ``sum_j lam_j (-C)^-1 b(f_j, f_j)`` over ``N(0, Q_inf)``."""
    c = as_matrix(C)
    qinf = solve_lyapunov(c, Q).entries
    if not nonlinear:
        return VelocityField.zeros(basis)
    lam, F = np.linalg.eigh(qinf)
    keep = np.abs(lam) > 1e-15 * max(np.abs(lam).max(), 1e-300)
    lam, F = lam[keep], F[:, keep]
    bf = basis.trilinear.apply(F.T.copy(), F.T.copy())
    rbar = np.linalg.solve(-c, lam @ bf)
    return VelocityField(basis, rbar)

"""Two-index maps, level-2 lifts, seminorms and a dyadic sewing integrator.

A :class:`TwoIndexMap` stores ``G[i, j] = G_{t_i t_j}`` densely on a grid
``t_0 < ... < t_m``; only ``i <= j`` is meaningful and the rest is zero.
Level-2 values are tensors stored with ``(a ⊗ b)[k, l] = a[k] b[l]``.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, InputError, SewingDivergenceError

__all__ = [
    "TwoIndexMap",
    "RoughPath",
    "dyadic_grid",
    "level2_prefix",
    "fine_level2",
    "lift_from_prefix",
    "canonical_lift",
    "chen_defect",
    "geometric_defect",
    "holder_seminorm",
    "rough_distance",
    "sewing_integrate",
]


def dyadic_grid(level: int, T: float = 1.0) -> np.ndarray:
    return np.linspace(0.0, T, 2**level + 1)


@dataclass
class TwoIndexMap:
    """Values ``G_{st}`` for every grid pair ``s <= t``."""

    times: np.ndarray
    values: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        m = self.times.size
        if self.values.shape[:2] != (m, m):
            raise GridError(f"values must start with shape {(m, m)}, got {self.values.shape}")
        if np.any(np.diff(self.times) <= 0):
            raise GridError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise InputError("two-index map has non-finite values")

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.times.size - 1

    @property
    def level(self) -> int | None:
        n = self.n
        return n.bit_length() - 1 if n & (n - 1) == 0 else None

    @property
    def value_shape(self) -> tuple:
        return self.values.shape[2:]

    @classmethod
    def from_path(cls, times, x):
        """Increments ``x_t - x_s`` of a sampled path."""
        x = np.asarray(x, dtype=float)
        vals = x[None, :] - x[:, None]
        return cls(times, _upper(vals))

    @classmethod
    def from_germ(cls, times, germ):
        """Evaluate a vectorized ``germ(s, t)`` on all grid pairs."""
        times = np.asarray(times, dtype=float)
        s, t = np.meshgrid(times, times, indexing="ij")
        return cls(times, _upper(np.asarray(germ(s, t), dtype=float)))

    def norms(self) -> np.ndarray:
        """Hilbert-Schmidt norm per pair, shape (m+1, m+1)."""
        v = self.values.reshape(self.values.shape[:2] + (-1,))
        return np.sqrt(np.einsum("ijk,ijk->ij", v, v))

    def delta(self) -> np.ndarray:
        """``G_st - G_sr - G_rt`` on all triples, shape (m+1, m+1, m+1, ...) as [s, r, t]."""
        G = self.values
        return G[:, None, :] - G[:, :, None] - G[None, :, :]

    def restrict(self, step: int) -> "TwoIndexMap":
        """Subgrid taking every ``step``-th point."""
        if self.n % step:
            raise GridError(f"grid of {self.n} intervals does not split into steps of {step}")
        return TwoIndexMap(self.times[::step], self.values[::step, ::step])

    def __sub__(self, other):
        _same_grid(self, other)
        return TwoIndexMap(self.times, self.values - other.values)

    def __add__(self, other):
        _same_grid(self, other)
        return TwoIndexMap(self.times, self.values + other.values)

    def __mul__(self, lam):
        return TwoIndexMap(self.times, float(lam) * self.values)

    __rmul__ = __mul__

    def to_rows(self):
        m = self.n
        for i in range(m + 1):
            for j in range(i + 1, m + 1):
                yield self.times[i], self.times[j], self.values[i, j].ravel()


def _upper(vals):
    m = vals.shape[0]
    mask = np.triu(np.ones((m, m), dtype=bool), 1)
    return vals * mask.reshape(mask.shape + (1,) * (vals.ndim - 2))


def _same_grid(a, b):
    if a.times.shape != b.times.shape or np.any(a.times != b.times):
        raise GridError("two-index maps live on different grids")


@dataclass
class RoughPath:
    """Level-1 and level-2 increments on a common grid."""

    level1: TwoIndexMap
    level2: TwoIndexMap
    alpha: float = 0.4
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        _same_grid(self.level1, self.level2)
        if not 1 / 3 < self.alpha < 1 / 2:
            raise InputError(f"alpha must lie in (1/3, 1/2), got {self.alpha}")
        d = self.level1.value_shape
        if len(d) != 1 or self.level2.value_shape != (d[0], d[0]):
            raise InputError("level2 must hold dim x dim tensors matching level1")

    @property
    def times(self):
        return self.level1.times

    @property
    def dim(self) -> int:
        return self.level1.value_shape[0]

    def restrict(self, step):
        return RoughPath(self.level1.restrict(step), self.level2.restrict(step), self.alpha,
                         dict(self.meta))

    def to_json(self) -> str:
        return json.dumps({
            "grid": self.times.tolist(),
            "alpha": self.alpha,
            "level1": self.level1.values.tolist(),
            "level2": self.level2.values.tolist(),
            **{k: v for k, v in self.meta.items()},
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        t = d.pop("grid")
        rp = cls(TwoIndexMap(t, d.pop("level1")), TwoIndexMap(t, d.pop("level2")),
                 d.pop("alpha"))
        rp.meta = d
        return rp

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        n = self.dim
        wr.writerow(["s", "t"] + [f"x{i}" for i in range(n)]
                    + [f"xx{i}_{j}" for i in range(n) for j in range(n)])
        for (s, t, a), (_, _, b) in zip(self.level1.to_rows(), self.level2.to_rows()):
            wr.writerow([repr(float(s)), repr(float(t))] + [repr(float(x)) for x in a]
                        + [repr(float(x)) for x in b])
        return buf.getvalue()


def fine_level2(y, ydot=None, dt=None) -> np.ndarray:
    """Level-2 increments over each fine interval, shape (..., n, d, d).

    With derivative samples the trapezoid rule for ``∫ δy_{sr} ⊗ ẏ_r dr``
    gives ``½ dt δy ⊗ ẏ_t``.  Without them the path is taken piecewise
    linear and the value is ``½ δy ⊗ δy``.
    """
    y = np.asarray(y, dtype=float)
    dy = np.diff(y, axis=-2)
    if ydot is None:
        return 0.5 * dy[..., :, None] * dy[..., None, :]
    ydot = np.asarray(ydot, dtype=float)
    dt = np.asarray(dt, dtype=float)[..., None, None]
    return 0.5 * dt * dy[..., :, None] * ydot[..., 1:, None, :]


def level2_prefix(y, fine2) -> np.ndarray:
    """``Z_k = Y²_{t_0 t_k}`` from fine level-2 increments, by Chen.

    Shapes: ``y`` (..., n+1, d), ``fine2`` (..., n, d, d); returns
    (..., n+1, d, d).
    """
    y = np.asarray(y, dtype=float)
    x = y - y[..., :1, :]
    dy = np.diff(y, axis=-2)
    inc = fine2 + x[..., :-1, :, None] * dy[..., None, :]
    z = np.cumsum(inc, axis=-3)
    zero = np.zeros(z.shape[:-3] + (1,) + z.shape[-2:])
    return np.concatenate([zero, z], axis=-3)


def lift_from_prefix(times, y, z, alpha=0.4, meta=None) -> RoughPath:
    """Rough path on ``times`` from path values and the level-2 prefix.

    ``Y²_st = Z_t - Z_s - (y_s - y_0) ⊗ (y_t - y_s)``, which makes Chen's
    relation hold identically.
    """
    y = np.asarray(y, dtype=float)
    x = y - y[0]
    d1 = x[None, :, :] - x[:, None, :]
    d2 = z[None, :] - z[:, None] - x[:, None, :, None] * d1[:, :, None, :]
    return RoughPath(TwoIndexMap(times, _upper(d1)), TwoIndexMap(times, _upper(d2)), alpha,
                     meta or {})


def _check_nested(n_fine, level):
    m = 2**level
    if level < 0 or n_fine % m:
        raise GridError(f"fine grid of {n_fine} intervals does not refine level {level}")
    return n_fine // m


def canonical_lift(y, level: int, T: float = 1.0, ydot=None, alpha: float = 0.4) -> RoughPath:
    """Canonical level-2 lift of samples ``y`` on a uniform grid over [0, T].

    Parameters
    ----------
    y : array (n+1, d)
        Path samples; ``n`` must be a multiple of ``2**level``.
    level : int
        Dyadic level of the output grid.
    ydot : array (n+1, d), optional
        Derivative samples for the trapezoid rule.  Omit for a piecewise
        linear interpolation (exactly geometric).
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0] - 1
    step = _check_nested(n, level)
    dt = np.full(n, T / n)
    z = level2_prefix(y, fine2=fine_level2(y, ydot, dt))
    return lift_from_prefix(dyadic_grid(level, T), y[::step], z[::step], alpha)


def chen_defect(rp: RoughPath) -> float:
    """Max Hilbert-Schmidt norm of ``δY²_srt - Y¹_sr ⊗ Y¹_rt`` over ``s < r < t``."""
    Y1, Y2 = rp.level1.values, rp.level2.values
    m = Y1.shape[0]
    worst = 0.0
    for r in range(1, m - 1):
        s = slice(0, r)
        t = slice(r + 1, m)
        d = (Y2[s, None, t] - Y2[s, None, r:r + 1] - Y2[None, r:r + 1, t]
             - Y1[s, None, r:r + 1, :, None] * Y1[None, r:r + 1, t, None, :])
        worst = max(worst, float(np.sqrt(np.einsum("...ij,...ij->...", d, d)).max()))
    return worst


def geometric_defect(rp: RoughPath) -> float:
    """Max HS norm of ``Sym(Y²_st) - ½ Y¹_st ⊗ Y¹_st`` over grid pairs."""
    Y1, Y2 = rp.level1.values, rp.level2.values
    sym = 0.5 * (Y2 + np.swapaxes(Y2, -1, -2))
    d = sym - 0.5 * Y1[..., :, None] * Y1[..., None, :]
    return float(np.sqrt(np.einsum("...ij,...ij->...", d, d)).max())


def holder_seminorm(G: TwoIndexMap, exponent: float, mode: str = "holder") -> float:
    """Hölder or p-variation seminorm over grid pairs.

    ``mode="holder"``: ``max ||G_st|| / |t-s|^exponent``.
    ``mode="p-variation"``: ``exponent`` is ``p``; the supremum over
    partitions through grid points is found by dynamic programming.
    Exponents below one are accepted, which is what the remainder's
    ``p/3``-variation needs.
    """
    if not exponent > 0:
        raise InputError(f"exponent must be positive, got {exponent}")
    nrm = G.norms()
    t = G.times
    if mode == "holder":
        iu = np.triu_indices(t.size, 1)
        return float(np.max(nrm[iu] / (t[iu[1]] - t[iu[0]]) ** exponent, initial=0.0))
    if mode in ("p-variation", "pvar", "variation"):
        p = exponent
        w = nrm**p
        best = np.zeros(t.size)
        for j in range(1, t.size):
            best[j] = np.max(best[:j] + w[:j, j])
        return float(best[-1] ** (1.0 / p))
    raise InputError(f"unknown mode {mode!r}")


def rough_distance(X: RoughPath, Y: RoughPath, alpha: float) -> float:
    """Inhomogeneous distance ``|X¹-Y¹|_α + |X²-Y²|_{2α}``."""
    _same_grid(X.level1, Y.level1)
    return (holder_seminorm(X.level1 - Y.level1, alpha)
            + holder_seminorm(X.level2 - Y.level2, 2 * alpha))


def sewing_integrate(germ, level: int, T: float = 1.0, tol: float = 1e-10,
                     max_level: int = 20) -> TwoIndexMap:
    """Additive map obtained by dyadic refinement of a germ.

    Parameters
    ----------
    germ : callable or TwoIndexMap
        ``germ(s, t)`` vectorized over arrays of ``s`` and ``t``, or a
        stored map on a dyadic grid (refinement then stops at that grid).
    level : int
        Dyadic level of the output grid on [0, T].
    tol : float
        Stop when the largest change of any cell sum between successive
        refinements falls below this.
    max_level : int
        Finest level tried.  If reached before ``tol`` while changes still
        contract, the last value is returned with a RuntimeWarning.

    Raises
    ------
    SewingDivergenceError
        If successive changes stop contracting (defect exponent <= 1).
    """
    if isinstance(germ, TwoIndexMap):
        stored = germ
        if stored.level is None or stored.level < level:
            raise GridError("stored germ grid must be dyadic and at least as fine as the target")
        T = float(stored.times[-1] - stored.times[0])
        t0 = float(stored.times[0])
        max_level = min(max_level, stored.level)

        def germ(s, t):
            i = np.rint((s - t0) / T * stored.n).astype(int)
            j = np.rint((t - t0) / T * stored.n).astype(int)
            return stored.values[i, j]
    else:
        t0 = 0.0
    m = 2**level

    def cell_sums(j):
        # each target cell split into 2**j pieces
        pts = t0 + T * np.arange(m * 2**j + 1) / (m * 2**j)
        vals = np.asarray(germ(pts[:-1], pts[1:]), dtype=float)
        return vals.reshape((m, 2**j) + vals.shape[1:]).sum(axis=1)

    prev = cell_sums(0)
    changes = []
    converged = False
    j = 0
    for j in range(1, max_level - level + 1):
        cur = cell_sums(j)
        change = float(np.abs(cur - prev).max(initial=0.0))
        changes.append(change)
        prev = cur
        if change < tol:
            converged = True
            break
        if len(changes) >= 4 and all(changes[-k] >= 0.9 * changes[-k - 1] for k in (1, 2, 3)):
            raise SewingDivergenceError(
                f"dyadic refinement does not settle: changes {changes[-4:]}")
    if not converged and changes:
        warnings.warn(f"sewing stopped at level {level + j} with last change {changes[-1]:.3g}",
                      RuntimeWarning, stacklevel=2)
    path = np.concatenate([np.zeros((1,) + prev.shape[1:]), np.cumsum(prev, axis=0)])
    out = TwoIndexMap.from_path(t0 + dyadic_grid(level, T), path)
    out.info = {"levels": level + j, "changes": changes, "converged": converged}
    return out

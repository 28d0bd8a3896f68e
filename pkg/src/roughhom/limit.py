"""Limit rough path built from a stored Brownian path.

Given increments of ``Q^1/2 W`` on a fine grid, ``B = (-C)^-1 Q^1/2 W`` and

    Itô form:          B²_st = Σ (B_r - B_s) ⊗ ΔB_r (left points) + (t-s) D
    Stratonovich form: B²_st = midpoint sums over pairs of fine steps + (t-s) M

Both are aggregated to the coarse dyadic grid through Chen's relation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import GridError, InputError
from .operators import Tensor2, as_matrix, correction_M, drift_tensor_D, solve_lyapunov
from .roughpath import RoughPath, dyadic_grid, level2_prefix, lift_from_prefix

__all__ = ["LimitLift", "limit_prefix", "limit_lift", "strat_consistency_check"]

FORMS = ("ito", "stratonovich")


@dataclass
class LimitLift:
    rough_path: RoughPath
    form: str
    D: Tensor2
    M: Tensor2

    def to_json(self) -> str:
        d = json.loads(self.rough_path.to_json())
        d.update(form=self.form, D=self.D.entries.tolist(), M=self.M.entries.tolist())
        return json.dumps(d, sort_keys=True)


def limit_prefix(dW, C, form: str = "ito", T: float = 1.0, drift=None):
    """Fine-grid ``B`` and level-2 prefix ``Z_t = B²_{0t}`` (batch aware).

    Parameters
    ----------
    dW : array (..., n, d)
        Increments of ``Q^1/2 W``.
    drift : array (d, d), optional
        Tensor added as ``t * drift`` to the prefix.

    Returns
    -------
    B, Z : arrays (..., m+1, d) and (..., m+1, d, d)
        On the fine grid for the Itô form, on every second fine point for
        the Stratonovich form (``m = n/2``).
    """
    if form not in FORMS:
        raise InputError(f"form must be one of {FORMS}, got {form!r}")
    dW = np.asarray(dW, dtype=float)
    G = np.linalg.inv(-as_matrix(C))
    dB = dW @ G.T
    n = dB.shape[-2]
    if form == "ito":
        fine2 = np.zeros(dB.shape + dB.shape[-1:])
        incs = dB
    else:
        if n % 2:
            raise GridError("Stratonovich form needs an even number of fine steps")
        d1 = dB[..., 0::2, :]
        incs = d1 + dB[..., 1::2, :]
        fine2 = d1[..., :, None] * incs[..., None, :]
    zero = np.zeros(incs.shape[:-2] + (1,) + incs.shape[-1:])
    B = np.concatenate([zero, np.cumsum(incs, axis=-2)], axis=-2)
    Z = level2_prefix(B, fine2)
    if drift is not None:
        t = np.linspace(0.0, T, B.shape[-2])
        Z = Z + t[:, None, None] * np.asarray(drift)
    return B, Z


def limit_lift(dW, C, Q, level: int, form: str = "ito", T: float = 1.0,
               alpha: float = 0.4) -> LimitLift:
    """Lift ``(B¹, B²)`` on the dyadic grid of the given level."""
    c = as_matrix(C)
    qinf = solve_lyapunov(c, Q)
    D = drift_tensor_D(c, Q, qinf)
    M = correction_M(c, Q, qinf)
    dW = np.asarray(dW, dtype=float)
    n = dW.shape[0]
    m = 2**level
    if n % m or (form == "stratonovich" and (n // m) % 2):
        raise GridError(f"fine grid of {n} steps does not refine level {level} for {form}")
    drift = D.entries if form == "ito" else M.entries
    B, Z = limit_prefix(dW, c, form, T, drift)
    step = (B.shape[0] - 1) // m
    rp = lift_from_prefix(dyadic_grid(level, T), B[::step], Z[::step], alpha,
                          {"form": form})
    return LimitLift(rp, form, D, M)


def strat_consistency_check(ito: LimitLift, strat: LimitLift) -> float:
    """Max HS norm of ``B²(Itô) - B²(Strat)`` over grid pairs."""
    a, b = ito.rough_path, strat.rough_path
    if a.times.shape != b.times.shape or np.any(a.times != b.times):
        raise InputError("lifts live on different grids")
    scale = max(np.abs(a.level1.values).max(), 1.0)
    if np.abs(a.level1.values - b.level1.values).max() > 1e-12 * scale:
        raise InputError("lifts were not built from the same Brownian path")
    d = a.level2.values - b.level2.values
    return float(np.sqrt(np.einsum("...ij,...ij->...", d, d)).max())

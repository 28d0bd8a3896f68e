"""Acceptance criteria A1-A9.

Each test prints one ``PASS``/``FAIL`` line with the measured values.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from roughhom.experiments import ExperimentConfig, load_config, run_experiment
from roughhom.operators import (correction_M, drift_tensor_D, ito_stratonovich_corrector,
                                solve_lyapunov)
from roughhom.roughpath import canonical_lift, chen_defect, geometric_defect

from conftest import random_spd, random_stable

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def verdict(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n{name} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{name}: {detail}"


def config(name, **over):
    d = load_config(CONFIGS / f"{name}.json").to_dict()
    d.update(over)
    return ExperimentConfig.from_dict(d)


def test_A1_lyapunov_and_M(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_res = worst_anti = worst_sym = worst_comm = 0.0
    for i in range(100):
        d = int(rng.integers(1, 9))
        C, Q = random_stable(rng, d), random_spd(rng, d)
        X = solve_lyapunov(C, Q).entries
        worst_res = max(worst_res, np.linalg.norm(C @ X + X @ C.T + Q) / np.linalg.norm(Q))
        M = correction_M(C, Q, X).entries
        worst_anti = max(worst_anti, np.abs(M + M.T).max())
        D = drift_tensor_D(C, Q, X).entries
        worst_sym = max(worst_sym, np.abs(0.5 * (D + D.T) - ito_stratonovich_corrector(C, Q)).max())
        # commuting symmetric pair
        U, _ = np.linalg.qr(rng.standard_normal((d, d)))
        Cs = U @ np.diag(-rng.uniform(0.2, 4, d)) @ U.T
        Qs = U @ np.diag(rng.uniform(0.1, 2, d)) @ U.T
        worst_comm = max(worst_comm, correction_M(Cs, Qs).hs_norm())
    rho = 0.3
    m12 = correction_M(-np.diag([1.0, 2.0]), np.array([[1, rho], [rho, 1.0]])).operator[0, 1]
    elapsed = time.perf_counter() - t0
    ok = (worst_res <= 1e-10 and worst_anti == 0 and worst_sym <= 1e-10 and worst_comm <= 1e-12
          and abs(m12 - rho / 12) <= 1e-12 and elapsed < 1.0)
    verdict(capsys, "A1", ok, f"residual {worst_res:.1e}, antisym {worst_anti:.1e}, "
            f"Sym(D) {worst_sym:.1e}, commuting |M| {worst_comm:.1e}, "
            f"M12-rho/12 {abs(m12 - rho / 12):.1e}, {elapsed:.2f}s")


def test_A2_chen_and_geometric(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_chen, worst_ratio = 0.0, np.inf
    for i in range(50):
        d = int(rng.integers(1, 5))
        if i % 2:
            # sampled path: scaled random walk
            y = np.cumsum(rng.standard_normal((513, d)), axis=0) / np.sqrt(512)
            rp = canonical_lift(y, 5)
        else:
            # smooth path with derivative samples, trapezoid lift
            a, w, ph = rng.uniform(0.5, 2, d), rng.uniform(1, 4, d), rng.uniform(0, 6, d)
            t = np.linspace(0, 1, 513)[:, None]
            rp = canonical_lift(a * np.sin(w * t + ph), 5, ydot=a * w * np.cos(w * t + ph))
            defects = []
            for n in (64, 128, 256):
                t = np.linspace(0, 1, n + 1)[:, None]
                defects.append(geometric_defect(canonical_lift(
                    a * np.sin(w * t + ph), 3, ydot=a * w * np.cos(w * t + ph))))
            ratios = np.array(defects[:-1]) / defects[1:]
            worst_ratio = min(worst_ratio, ratios.min())
        scale = max(np.abs(rp.level2.values).max(), 1e-300)
        worst_chen = max(worst_chen, chen_defect(rp) / scale)
    elapsed = time.perf_counter() - t0
    ok = worst_chen <= 1e-12 and worst_ratio >= 3.5 and elapsed < 10
    verdict(capsys, "A2", ok, f"Chen defect {worst_chen:.1e} rel, geometric defect "
            f"refinement ratio >= {worst_ratio:.2f} (O(h^2) = 4), {elapsed:.1f}s")


@pytest.fixture(scope="module")
def lift_report():
    t0 = time.perf_counter()
    rep = run_experiment(config("lift-convergence"))
    return rep, time.perf_counter() - t0


def test_A3_level1_rate(capsys, lift_report):
    rep, elapsed = lift_report
    s = rep.measures["slope"]
    ok = abs(s - 1.0) <= 0.2 and elapsed < 120
    verdict(capsys, "A3", ok, f"slope {s:.3f} (+-{rep.halfwidth:.3f}), target 1.0 +- 0.2, "
            f"{rep.points[0]['n_replicas']} replicas, {elapsed:.1f}s")


def test_A4_level2_rate(capsys, lift_report):
    rep, elapsed = lift_report
    s = rep.measures["level2_slope"]
    ok = abs(s - 1.0) <= 0.25 and elapsed < 300
    verdict(capsys, "A4", ok, f"slope {s:.3f}, target 1.0 +- 0.25, {elapsed:.1f}s")


def test_A5_ergodic_rate(capsys):
    t0 = time.perf_counter()
    rep = run_experiment(config("ergodic-rate"))
    scalar = run_experiment(config("ergodic-rate", replicas=2000,
                                   operators={"C": [[-1.0]], "Q": [[1.0]]}))
    elapsed = time.perf_counter() - t0
    s = rep.slope
    z = scalar.measures["oracle_max_z"]
    ok = abs(s + 1.0) <= 0.15 and z < 4 and elapsed < 60
    verdict(capsys, "A5", ok, f"slope {s:.3f} vs t, target -1.0 +- 0.15; scalar case max "
            f"|z| vs closed form {z:.2f} (oracle slope "
            f"{scalar.diagnostics['scalar_oracle_slope']:.3f}), {elapsed:.1f}s")


def test_A6_ito_stokes(capsys):
    t0 = time.perf_counter()
    rep = run_experiment(config("ito-stokes", params={"steps_per_epsilon": 16,
                                                      "mc_samples": 100000}))
    elapsed = time.perf_counter() - t0
    rel, z = rep.measures["relative_error"], rep.measures["mc_max_z"]
    ok = rel <= 0.05 and z <= 3 and elapsed < 300
    verdict(capsys, "A6", ok, f"relative error {rel:.4f} (<= 0.05), MC max |z| {z:.2f} (<= 3), "
            f"|rbar| {rep.measures['oracle_norm']:.3f}, {elapsed:.1f}s")


def test_A7_energy_and_structure(capsys):
    t0 = time.perf_counter()
    rep = run_experiment(config("driver-bounds"))
    elapsed = time.perf_counter() - t0
    m = rep.measures
    diag = rep.diagnostics["per_epsilon"][0]
    viol = diag["energy_violation"]
    hs = sorted(viol, key=float)
    per_h = [viol[h] / float(h) for h in hs]
    div = diag["divergence_max"]
    ok = (m["energy_order_min"] >= 0.9 and max(per_h) <= 2 * min(per_h) and div < 1e-13
          and m["remainder_exponent_min"] > 1 and m["remainder_r2_min"] >= 0.9 and elapsed < 300)
    verdict(capsys, "A7", ok, f"energy violation order {m['energy_order_min']:.3f}, "
            f"constant {m['energy_constant_max']:.3g} (violation/h in "
            f"[{min(per_h):.3g}, {max(per_h):.3g}]), max |k.u_hat| {div:.1e}, remainder "
            f"exponent {m['remainder_exponent_min']:.3f} R^2 {m['remainder_r2_min']:.4f}, "
            f"{elapsed:.1f}s")


def test_A8_slow_limit(capsys):
    t0 = time.perf_counter()
    rep = run_experiment(config("slowfast-limit"))
    elapsed = time.perf_counter() - t0
    errs = ", ".join(f"{p['epsilon']:g}: {p['mean_error']:.4f}+-{p['stderr']:.4f}"
                     for p in rep.points)
    ok = rep.measures["monotone"] == 1.0 and elapsed < 900
    verdict(capsys, "A8", ok, f"errors {errs}; monotone within 2 stderr, {elapsed:.1f}s")


SMALL = {
    "lift-convergence": {"replicas": 110, "grid": {"fine_level": 9, "coarse_level": 4}},
    "correction-m": {},
    "ergodic-rate": {"replicas": 120, "epsilons": [1.0, 0.5, 0.25]},
    "ito-stokes": {"replicas": 60, "epsilons": [0.125, 0.0625],
                   "params": {"steps_per_epsilon": 8, "mc_samples": 1000}},
    "slowfast-limit": {"replicas": 12, "epsilons": [0.25, 0.125],
                       "grid": {"fine_level": 9, "coarse_level": 5},
                       "params": {"block": 5}},
    "driver-bounds": {"grid": {"fine_level": 8, "coarse_level": 3},
                      "params": {"remainder_level": 6, "energy_strides": [1, 2]}},
}


def test_A9_determinism(capsys, monkeypatch):
    t0 = time.perf_counter()
    same = {}
    for name, over in SMALL.items():
        cfg = config(name, **over)
        texts = []
        for threads in ("1", "3", "1"):
            monkeypatch.setenv("ROUGHHOM_THREADS", threads)
            texts.append(run_experiment(cfg).to_json().encode())
        same[name] = len(set(texts)) == 1
        json.loads(texts[0])
    elapsed = time.perf_counter() - t0
    ok = all(same.values())
    verdict(capsys, "A9", ok, f"byte-identical JSON under 1/3/1 threads: "
            f"{', '.join(k for k, v in same.items() if v)}; {elapsed:.1f}s")

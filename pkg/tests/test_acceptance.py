"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal
summary (see conftest.py), whether the criterion passes or fails.
"""

import math
from contextlib import contextmanager
from importlib import resources

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from stochcancel.config import config_from_dict, load_config
from stochcancel.ensemble import run_ensemble, sweep
from stochcancel.estimators import (
    derivative_check,
    duhamel_norm_check,
    dyson2_mean_error,
    fg_decomposition,
    fit_lieb_robinson,
    lipschitz_constant,
    lr_truncation_error,
    zero_crossings,
)
from stochcancel.hamiltonian import attach_noise, build_heisenberg_chain
from stochcancel.noise import ChiDeformation, sampler_diagnostics
from stochcancel.pauli import LocalOperator, OperatorMatrix, to_matrix
from stochcancel.propagator import DenseEvolver, KrylovEvolver, PropagatorConfig, basis_state
from stochcancel.stats import scaling_fit

J, H_FIELD = 0.2 * math.pi, 2 * math.pi
N_SWEEP = (4, 6, 8, 10, 12)
DELTAS = (1e-3, 2e-3, 5e-3, 1e-2)


@contextmanager
def criterion(k, title):
    """Collect (ok, detail) pairs and record one PASS/FAIL line for criterion k."""
    checks = []
    try:
        yield checks
    except Exception as exc:
        ACCEPTANCE_LINES[k] = f"criterion {k:2d} FAIL  {title}: {type(exc).__name__}: {exc}"
        raise
    ok = all(c for c, _ in checks)
    detail = "; ".join(d for _, d in checks)
    ACCEPTANCE_LINES[k] = f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(ACCEPTANCE_LINES[k])
    failed = [d for c, d in checks if not c]
    assert not failed, failed


# ---------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def n_sweep_config():
    # periodic chain, extensive O = sum_i Y_i, fixed t = 1 and delta = 0.01
    return config_from_dict({
        "system": {"N": 4, "J": J, "h": H_FIELD, "boundary": "periodic"},
        "noise": {"variant": "raw", "delta_prime": 0.01, "seed": 20240202},
        "propagator": {"method": "krylov"},
        "experiment": {"kind": "sweep_N", "times": [0.0, 1.0], "observable": "sum:Y",
                       "n_realizations": 500, "sweep_values": list(N_SWEEP)},
    })


@pytest.fixture(scope="module")
def random_n_sweep(n_sweep_config):
    return sweep(n_sweep_config, mode="random")


@pytest.fixture(scope="module")
def symmetric_n_sweep(n_sweep_config):
    return sweep(n_sweep_config, mode="symmetric")


def _final_values(res, n_value, field):
    return np.array([getattr(r, field) for r in res.records if r.sweep_value == n_value and r.t == 1.0])


# ---------------------------------------------------------------- criteria

def test_criterion_01_random_vs_symmetric_contrast():
    cfg = load_config(resources.files("stochcancel") / "configs" / "figure1_n10.toml", environ={})
    assert cfg.system.N == 10 and cfg.n_realizations == 200 and len(cfg.time_grid()) == 400
    assert cfg.time_grid()[-1] == 5.0 and cfg.noise.delta_prime == 0.01
    with criterion(1, "random vs symmetric time-averaged |mean error|, N=10") as checks:
        _, rnd = run_ensemble(cfg, mode="random")
        _, sym = run_ensemble(cfg, mode="symmetric")
        r, s = rnd.time_averaged_abs_mean(), sym.time_averaged_abs_mean()
        checks.append((r < s, f"random {r:.3e} < symmetric {s:.3e}"))


def test_criterion_02_std_exponent(random_n_sweep):
    with criterion(2, "std of error for sum_i Y_i vs N") as checks:
        small = max(math.sqrt(n) * 1.0 * 0.01 for n in N_SWEEP)
        checks.append((small <= 0.3, f"sqrt(N) t delta <= {small:.3f}"))
        fit = scaling_fit(list(zip(N_SWEEP, random_n_sweep.statistic("std"))))
        checks.append((abs(fit.slope - 0.5) <= 0.15, f"slope {fit.slope:.3f} +/- {fit.stderr:.3f} (target 0.5 +/- 0.15)"))


def test_criterion_03_symmetric_exponent(symmetric_n_sweep):
    with criterion(3, "symmetric |error| vs N") as checks:
        fit = scaling_fit(list(zip(N_SWEEP, symmetric_n_sweep.statistic("abs_mean"))))
        checks.append((abs(fit.slope - 1.0) <= 0.2, f"slope {fit.slope:.3f} (target 1.0 +/- 0.2)"))


def test_criterion_04_mean_error_exponent_and_dyson():
    cfg = config_from_dict({
        "system": {"N": 8, "J": J, "h": H_FIELD},
        "noise": {"variant": "raw", "delta_prime": 0.01, "seed": 777, "antithetic": True},
        "experiment": {"kind": "sweep_delta", "times": [0.625], "observable": "Y1",
                       "n_realizations": 400, "sweep_values": list(DELTAS)},
    })
    with criterion(4, "|mean error| vs delta, N=8, t=0.625") as checks:
        res = sweep(cfg, mode="random")
        fit = scaling_fit(list(zip(DELTAS, res.statistic("abs_mean"))))
        checks.append((abs(fit.slope - 2.0) <= 0.25, f"slope {fit.slope:.4f} (target 2.0 +/- 0.25)"))
        spec, pert = cfg.system.build()
        oracle = dyson2_mean_error(spec.matrix(), pert.operators, DELTAS[0] ** 2,
                                   to_matrix(LocalOperator.pauli("Y", 1), 8), basis_state(8), 0.625)
        lo, hi = res.summaries[0].ci95()
        checks.append((lo <= oracle <= hi, f"dyson2 {oracle:.4e} in 95% CI [{lo:.4e}, {hi:.4e}] at delta=1e-3"))


def test_criterion_05_fidelity_exponent(random_n_sweep):
    with criterion(5, "std of 1 - |<phi|phi'>| vs N") as checks:
        stds = [np.std(1 - np.sqrt(_final_values(random_n_sweep, n, "fidelity")), ddof=1) for n in N_SWEEP]
        fit = scaling_fit(list(zip(N_SWEEP, stds)))
        checks.append((abs(fit.slope - 0.5) <= 0.15, f"slope {fit.slope:.3f} (target 0.5 +/- 0.15)"))
        fids = np.array([r.fidelity for r in random_n_sweep.records])
        checks.append((bool(np.all((fids >= 0) & (fids <= 1))), "0 <= F <= 1 on all records"))
        at_zero = [r.fidelity for r in random_n_sweep.records if r.t == 0.0]
        checks.append((all(f == 1.0 for f in at_zero), f"F(0) == 1 exactly on {len(at_zero)} records"))


def test_criterion_06_concentration_shape():
    cfg = config_from_dict({
        "system": {"N": 8, "J": J, "h": H_FIELD},
        "noise": {"variant": "raw", "delta_prime": 0.01, "seed": 31337},
        "experiment": {"kind": "tail", "times": [1.0], "observable": "Y1", "n_realizations": 2000},
    })
    with criterion(6, "exceedance profile, N=8, 2000 realizations") as checks:
        recs, s = run_ensemble(cfg, mode="random")
        tail = s.tail
        checks.append((bool(np.all(np.diff(tail.exceedance) <= 0)), "exceedance nonincreasing in a"))
        checks.append((tail.c_hat > 0 and tail.fit.r2 >= 0.9, f"c_hat {tail.c_hat:.3f}, R^2 {tail.fit.r2:.3f}"))
        x = np.array([r.observable_error for r in recs])
        c_lip = lipschitz_constant(1.0, 8, 1.0, 0.01)
        assert tail.c_lip == pytest.approx(c_lip)
        sigma = x.std(ddof=1)
        p3 = float(np.mean(np.abs(x - x.mean()) >= 3 * sigma))
        checks.append((p3 <= 0.01, f"P[|X - mean| >= 3 sigma] = {p3:.4f} <= 0.01"))


def test_criterion_07_light_cone_decay():
    spec, _ = build_heisenberg_chain(8, J, H_FIELD)
    O = LocalOperator.pauli("Y", 2)
    with criterion(7, "||O(t) - O_R(t)|| vs R, N=8, S_O={2}, t=1") as checks:
        radii = np.arange(1, 7)
        errs = np.array([lr_truncation_error(spec, O, 1.0, R) for R in radii])
        checks.append((bool(np.all(np.diff(errs) <= 1e-12)), "nonincreasing in R"))
        beyond = lr_truncation_error(spec, O, 1.0, spec.lattice.diameter + 1)
        checks.append((beyond <= 1e-10, f"{beyond:.1e} beyond the diameter"))
        fit = fit_lieb_robinson(radii, errs, 1.0, spec.strength_bound)
        checks.append((fit.mu > 0 and fit.mu_stderr < 0.5 * fit.mu, f"mu {fit.mu:.3f} +/- {fit.mu_stderr:.3f}"))


def _fg_trace(h):
    spec, pert = build_heisenberg_chain(8, J, h)
    Hp = attach_noise(spec, pert, np.full(8, 0.01)).matrix()
    O = to_matrix(sum((LocalOperator.pauli("Y", i, 1 / 8) for i in range(8)), LocalOperator()), 8)
    return fg_decomposition(spec.matrix(), Hp, O, basis_state(8), np.linspace(0, 5, 400), with_norm=False)


def test_criterion_08_oscillation_growth_split():
    with criterion(8, "F/G split, N=8, O=(1/N) sum_i Y_i") as checks:
        tr = _fg_trace(H_FIELD)
        frac = float(np.mean(np.abs(tr.expF) > np.abs(tr.expG)))
        checks.append((frac >= 0.8, f"|<F>| > |<G>| on {100 * frac:.1f}% of grid"))
        chk = derivative_check(tr)
        checks.append((chk.passed, f"derivative residual {chk.max_residual:.2e} <= {chk.tolerance:.2e}"))
        rng = np.random.default_rng(8)
        dev = 0.0
        for _ in range(50):
            a = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
            b = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
            dev = max(dev, abs(duhamel_norm_check(OperatorMatrix((a + a.conj().T) / 2, True),
                                                  OperatorMatrix((b + b.conj().T) / 2, True), rng.uniform(0, 5))))
        checks.append((dev <= 1e-9, f"Duhamel deviation {dev:.1e} over 50 trials"))
        fast, slow = zero_crossings(tr.error), zero_crossings(_fg_trace(0.5 * math.pi).error)
        checks.append((slow < fast, f"zero crossings h=0.5pi {slow} < h=2pi {fast}"))


def test_criterion_09_sampler_battery():
    variants = [ChiDeformation.raw(0.01), ChiDeformation.uniform(0.01), ChiDeformation.truncated(0.01, 0.02)]
    with criterion(9, "sampler battery on 10^6 draws") as checks:
        for d in variants:
            results = {c.name: c for c in sampler_diagnostics(d, 10**6, 99)}
            names = ("odd", "slope", "bounded", "ks", "deterministic")
            bad = [n for n in names if not results[n].passed]
            checks.append((not bad, f"{d.variant} {'ok' if not bad else 'failed ' + ','.join(bad)}"))


def test_criterion_10_propagator_certification():
    rng = np.random.default_rng(10)
    cfg = PropagatorConfig("krylov")
    worst = unit = energy = back = 0.0
    with criterion(10, "Krylov vs dense on 20 random Heisenberg instances, N <= 8") as checks:
        for _ in range(20):
            N = int(rng.integers(2, 9))
            spec, pert = build_heisenberg_chain(N, rng.normal(), rng.normal(), rng.choice(["open", "periodic"]))
            Hm = attach_noise(spec, pert, rng.normal(scale=0.1, size=N)).matrix()
            psi = rng.normal(size=2**N) + 1j * rng.normal(size=2**N)
            psi /= np.linalg.norm(psi)
            times = np.sort(rng.uniform(0, 3, size=4))
            a = KrylovEvolver(Hm, cfg).trajectory(psi, times)
            b = DenseEvolver(Hm).trajectory(psi, times)
            worst = max(worst, float(np.max(np.linalg.norm(a - b, axis=1))))
            unit = max(unit, float(np.max(np.abs(np.linalg.norm(a, axis=1) - 1))))
            Hd = Hm.toarray()
            e = np.einsum("ij,ij->i", a.conj(), (Hd @ a.T).T).real
            energy = max(energy, float(np.max(np.abs(e - np.vdot(psi, Hd @ psi).real))))
            rev = KrylovEvolver(Hm, cfg).evolve(a[-1], -times[-1])
            back = max(back, float(np.linalg.norm(rev - psi)))
        checks.append((worst <= 1e-10, f"max 2-norm difference {worst:.1e}"))
        checks.append((unit <= 1e-10, f"norm drift {unit:.1e}"))
        checks.append((energy <= 1e-8, f"energy drift {energy:.1e}"))
        checks.append((back <= 2e-10, f"time-reversal error {back:.1e}"))

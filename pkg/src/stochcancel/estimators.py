"""Scalar quantities bounded by the error analysis.

Observable error and fidelity use two Schroedinger-picture propagations.
The oscillation/growth split, Duhamel check, second-order Dyson mean error
and light-cone truncation error need full operators and are dense-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalDiagnosticError, ResourceCeilingError
from .hamiltonian import HamiltonianSpec, PerturbedHamiltonian, truncate_to_lightcone
from .pauli import DENSE_CEILING, LocalOperator, OperatorMatrix, spectral_norm, support, to_matrix
from .propagator import DenseEvolver, PropagatorConfig, make_evolver
from .stats import decay_fit

__all__ = [
    "IMAG_TOL",
    "ErrorRecord",
    "FGTrace",
    "DerivativeCheck",
    "observable_error",
    "expectation_values",
    "overlap_fidelity",
    "fidelity",
    "fg_decomposition",
    "derivative_check",
    "zero_crossings",
    "duhamel_norm_check",
    "lipschitz_constant",
    "dyson2_mean_error",
    "lr_truncation_error",
    "LRFit",
    "fit_lieb_robinson",
]

#: Largest tolerated imaginary residue of a hermitian expectation value.
IMAG_TOL = 1e-10


@dataclass(frozen=True)
class ErrorRecord:
    seed: int
    sweep_value: float
    t: float
    observable_error: float
    fidelity: float

    CSV_HEADER = ("seed", "sweep_value", "t", "observable_error", "fidelity")

    def csv_row(self) -> list[str]:
        return [str(self.seed)] + [format(v, ".17g") for v in (self.sweep_value, self.t, self.observable_error, self.fidelity)]


def _matrix(x) -> OperatorMatrix:
    if isinstance(x, (HamiltonianSpec, PerturbedHamiltonian)):
        return x.matrix()
    return x if isinstance(x, OperatorMatrix) else OperatorMatrix.wrap(x)


def _real(values, scale=1.0):
    values = np.asarray(values)
    resid = float(np.max(np.abs(values.imag), initial=0.0)) if np.iscomplexobj(values) else 0.0
    if resid > IMAG_TOL * max(scale, 1.0):
        raise NumericalDiagnosticError(f"expectation value has imaginary residue {resid:.3e}", resid)
    return np.real(values)


def _expectations(states: np.ndarray, O: OperatorMatrix) -> np.ndarray:
    """<psi|O|psi> row by row for states of shape (n, dim)."""
    applied = (O.data @ states.T).T
    return np.einsum("ij,ij->i", states.conj(), applied)


def expectation_values(states: np.ndarray, O: OperatorMatrix) -> np.ndarray:
    """Real <psi|O|psi> for each row of ``states``; O must be hermitian."""
    vals = _expectations(np.atleast_2d(states), O)
    return _real(vals, float(np.max(np.abs(vals), initial=0.0)))


def overlap_fidelity(ref: np.ndarray, pert: np.ndarray, times) -> np.ndarray:
    """|<ref_k|pert_k>|^2 row by row, clipped to 1 and exactly 1 at t = 0."""
    F = np.abs(np.einsum("ij,ij->i", ref.conj(), pert)) ** 2
    F = np.minimum(F, 1.0)
    F[np.asarray(times) == 0] = 1.0
    return F


def observable_error(H, Hp, psi0, O, t, cfg: PropagatorConfig | None = None):
    """tr[rho O'(t)] - tr[rho O(t)] for a pure state vector or density matrix.

    ``t`` may be a scalar or an array of times.
    """
    H, Hp, O = _matrix(H), _matrix(Hp), _matrix(O)
    if not O.hermitian:
        raise ConfigError("observable must be hermitian")
    psi0 = np.asarray(psi0)
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if psi0.ndim == 2:
        out = _mixed_error(H, Hp, psi0, O, times)
    else:
        ref = make_evolver(H, cfg).trajectory(psi0, times)
        pert = make_evolver(Hp, cfg).trajectory(psi0, times)
        out = expectation_values(pert, O) - expectation_values(ref, O)
    return float(out[0]) if scalar else out


def _mixed_error(H, Hp, rho, O, times):
    if H.dim > DENSE_CEILING:
        raise ResourceCeilingError("mixed-state errors use operator evolution and are dense-only")
    if rho.shape != (H.dim, H.dim):
        raise ConfigError("density matrix has the wrong shape")
    if abs(np.trace(rho) - 1) > 1e-10 or np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -1e-10:
        raise ConfigError("density matrix must be positive semidefinite with unit trace")
    ev, evp = DenseEvolver(H), DenseEvolver(Hp)
    vals = [np.trace(rho @ (evp.heisenberg(O, t) - ev.heisenberg(O, t))) for t in times]
    return _real(np.array(vals))


def fidelity(H, Hp, psi0, t, cfg: PropagatorConfig | None = None):
    """|<psi0| e^{iHt} e^{-iH't} |psi0>|^2."""
    H, Hp = _matrix(H), _matrix(Hp)
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))
    ref = make_evolver(H, cfg).trajectory(psi0, times)
    pert = make_evolver(Hp, cfg).trajectory(psi0, times)
    F = overlap_fidelity(ref, pert, times)
    return float(F[0]) if scalar else F


# ---------------------------------------------------------------------------
# oscillation / growth split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FGTrace:
    """<F(t)>, <G(t)>, the error <O'(t) - O(t)> and ||O'(t) - O(t)|| on a grid."""

    times: np.ndarray
    expF: np.ndarray
    expG: np.ndarray
    error: np.ndarray
    delta_norm: np.ndarray | None


def fg_decomposition(H, Hp, O, psi0, times, cfg: PropagatorConfig | None = None, *, with_norm: bool = True) -> FGTrace:
    """Split d/dt <O'(t) - O(t)> into i[H, O'(t) - O(t)] and i sum g_i [V_i, O'(t)].

    The perturbation sum_i g_i V_i is taken as H' - H.
    """
    H, Hp, O = _matrix(H), _matrix(Hp), _matrix(O)
    if H.dim > DENSE_CEILING:
        raise ResourceCeilingError(f"F/G decomposition limited to dimension {DENSE_CEILING}")
    times = np.asarray(times, dtype=float)
    ev, evp = DenseEvolver(H), DenseEvolver(Hp)
    h = H.toarray()
    p = Hp.toarray() - h
    o = O.toarray()
    h_psi = h @ psi0
    p_psi = p @ psi0
    expF = np.empty(len(times), dtype=complex)
    expG = np.empty(len(times), dtype=complex)
    err = np.empty(len(times))
    norms = np.empty(len(times)) if with_norm else None
    for k, t in enumerate(times):
        # O(t) psi0 = e^{iHt} O e^{-iHt} psi0, likewise for H'
        o_psi = ev.evolve(o @ ev.evolve(psi0, t), -t)
        op_psi = evp.evolve(o @ evp.evolve(psi0, t), -t)
        d_psi = op_psi - o_psi
        # <i[A, B]> = i(<A psi|B psi> - <B psi|A psi>) for hermitian A, B
        expF[k] = 1j * (np.vdot(h_psi, d_psi) - np.vdot(d_psi, h_psi))
        expG[k] = 1j * (np.vdot(p_psi, op_psi) - np.vdot(op_psi, p_psi))
        err[k] = _real(np.vdot(psi0, d_psi))
        if with_norm:
            delta = evp.heisenberg(o, t) - ev.heisenberg(o, t)
            norms[k] = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (delta + delta.conj().T))), initial=0.0))
    return FGTrace(times, expF, expG, err, norms)


def zero_crossings(values) -> int:
    """Sign changes of a trace, ignoring exact zeros."""
    v = np.asarray(values, dtype=float)
    v = v[v != 0]
    return int(np.count_nonzero(np.signbit(v[1:]) != np.signbit(v[:-1])))


@dataclass(frozen=True)
class DerivativeCheck:
    max_residual: float
    tolerance: float
    passed: bool
    coarse: bool


def derivative_check(trace: FGTrace, safety: float = 2.0) -> DerivativeCheck:
    """Compare <F> + <G> with the central difference of the error trace.

    The tolerance is the central-difference truncation bound dt^2/6 max|e'''|,
    with e''' estimated from second differences of <F> + <G>, times ``safety``.
    ``coarse`` flags grids where that bound is not small against the signal.
    """
    t = trace.times
    dt = np.diff(t)
    if len(t) < 5 or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("derivative check needs a uniform grid of at least 5 points")
    dt = dt[0]
    deriv = np.real(trace.expF + trace.expG)
    central = (trace.error[2:] - trace.error[:-2]) / (2 * dt)
    resid = np.abs(central - deriv[1:-1])
    third = np.abs(deriv[2:] - 2 * deriv[1:-1] + deriv[:-2]) / dt**2
    tol = safety * dt**2 / 6 * float(np.max(third)) + 1e-12
    coarse = dt**2 * float(np.max(third)) > 0.5 * float(np.max(np.abs(deriv)))
    return DerivativeCheck(float(np.max(resid)), tol, bool(np.max(resid) <= tol), bool(coarse))


def duhamel_norm_check(H, delta0, t: float) -> float:
    """||e^{iHt} delta0 e^{-iHt}|| - ||delta0||; zero up to rounding."""
    H = _matrix(H)
    D = _matrix(delta0)
    if H.dim > DENSE_CEILING:
        raise ResourceCeilingError(f"Duhamel check limited to dimension {DENSE_CEILING}")
    rotated = DenseEvolver(H).heisenberg(D, t)
    return spectral_norm(OperatorMatrix.wrap(rotated, hermitian=False)) - spectral_norm(OperatorMatrix.wrap(D.toarray(), hermitian=False))


def lipschitz_constant(norm_O: float, M: int, t: float, delta: float, mode: str = "observable") -> float:
    """Lipschitz constant of the noise-to-outcome map in the Gaussian parameters.

    ``observable``: 2 ||O|| sqrt(M) t delta; ``fidelity``: sqrt(M) t delta.
    """
    if min(norm_O, M, t, delta) < 0:
        raise ValueError("Lipschitz inputs must be non-negative")
    base = math.sqrt(M) * t * delta
    if mode == "observable":
        return 2.0 * norm_O * base
    if mode == "fidelity":
        return base
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# second-order Dyson term
# ---------------------------------------------------------------------------


def _gauss_simplex(t: float, n: int):
    """Nodes (t1, t2) and weights for 0 < t2 < t1 < t."""
    x, w = np.polynomial.legendre.leggauss(n)
    t1 = 0.5 * t * (x + 1)
    w1 = 0.5 * t * w
    u = 0.5 * (x + 1)
    t2 = np.outer(t1, u)
    w2 = np.outer(w1 * t1 * 0.5, w)
    return t1, t2, w2


def _dyson2_at(energies, psi, a_psi, a_mat, vt_list, variances, t, n):
    t1, t2, w2 = _gauss_simplex(t, n)
    total = 0.0
    ph1 = np.exp(1j * np.outer(t1, energies))  # (n, d)
    s2 = t2.ravel()
    ph2 = np.exp(1j * np.outer(s2, energies))  # (n*n, d)
    for vt, var in zip(vt_list, variances):
        if var == 0:
            continue
        # V(s) x = P(s) V P(s)^dagger x with P(s) = diag(e^{iEs}) in the eigenbasis
        b = ph2 * ((ph2.conj() * psi) @ vt.T)  # V(t2) psi
        a = ph1 * ((ph1.conj() * a_psi) @ vt.T)  # V(t1) A psi
        bv = ph1 * ((ph1.conj() * psi) @ vt.T)  # V(t1) psi
        c = bv @ a_mat.T  # A V(t1) psi
        b = b.reshape(len(t1), len(t1), -1)
        term = np.einsum("kd,kld->kl", a.conj(), b) - np.einsum("kld,kd->kl", b.conj(), c)
        total += var * float(np.sum(w2 * 2.0 * term.real))
    return -total


def dyson2_mean_error(H, perturbations, variances, O, psi0, t: float, *, n_nodes: int = 16, rtol: float = 1e-6,
                      atol: float = 1e-14, max_nodes: int = 256) -> float:
    """Second-order (pair-contraction) estimate of E[tr rho O'(t)] - tr rho O(t).

    Evaluates -sum_i var_i int_0^t dt1 int_0^t1 dt2 <[V_i(t2), [V_i(t1), O(t)]]>
    with V_i(s) = e^{iHs} V_i e^{-iHs} and O(t) = e^{iHt} O e^{-iHt}, by
    Gauss-Legendre quadrature on the simplex with node doubling until two
    successive results agree to ``max(atol, rtol * |value|)``.
    """
    H, O = _matrix(H), _matrix(O)
    if H.dim > DENSE_CEILING:
        raise ResourceCeilingError(f"Dyson oracle limited to dimension {DENSE_CEILING}")
    mats = [_matrix(v) if not isinstance(v, LocalOperator) else to_matrix(v, H.n_sites) for v in perturbations]
    variances = np.broadcast_to(np.asarray(variances, dtype=float), (len(mats),))
    if t == 0 or not np.any(variances):
        return 0.0
    ev = DenseEvolver(H)
    E, U = ev.energies, ev.vectors
    psi = U.conj().T @ np.asarray(psi0, dtype=complex)
    o_t = ev.heisenberg(O, t)
    a_mat = U.conj().T @ o_t @ U
    a_psi = a_mat @ psi
    vt_list = [U.conj().T @ m.toarray() @ U for m in mats]
    n = n_nodes
    prev = cur = _dyson2_at(E, psi, a_psi, a_mat, vt_list, variances, t, n)
    while True:
        n *= 2
        if n > max_nodes:
            raise NumericalDiagnosticError(f"Dyson quadrature did not converge with {max_nodes} nodes", abs(cur - prev))
        cur = _dyson2_at(E, psi, a_psi, a_mat, vt_list, variances, t, n)
        if abs(cur - prev) <= max(atol, rtol * abs(cur)):
            return cur
        prev = cur


# ---------------------------------------------------------------------------
# light-cone truncation
# ---------------------------------------------------------------------------


def lr_truncation_error(spec, O: LocalOperator, t: float, R: float, cfg: PropagatorConfig | None = None) -> float:
    """||O(t) - O_R(t)|| with O_R(t) evolved under the light-cone truncated Hamiltonian."""
    if spec.N > DENSE_CEILING.bit_length() - 1:
        raise ResourceCeilingError(f"truncation error limited to dimension {DENSE_CEILING}")
    s_o = support(O)
    full = spec.matrix()
    trunc = truncate_to_lightcone(spec, s_o, R).matrix()
    o = to_matrix(O, spec.N)
    diff = DenseEvolver(full).heisenberg(o, t) - DenseEvolver(trunc).heisenberg(o, t)
    diff = 0.5 * (diff + diff.conj().T)
    return float(np.max(np.abs(np.linalg.eigvalsh(diff)), initial=0.0))


@dataclass(frozen=True)
class LRFit:
    mu: float
    mu_stderr: float
    v: float
    amplitude: float
    r2: float


def fit_lieb_robinson(radii, errors, t: float, zeta: float, norm_O: float = 1.0, support_size: int = 1,
                      floor: float = 1e-13) -> LRFit:
    """Fit ln err = ln A - mu R, then solve A = ||O|| |S_O| (e^{v zeta t} - 1) for v.

    Points at or below ``floor`` (exact zeros beyond the diameter) are excluded.
    """
    radii = np.asarray(radii, dtype=float)
    errors = np.asarray(errors, dtype=float)
    use = errors > floor
    fit = decay_fit(radii[use], errors[use])
    amp = math.exp(fit.intercept)
    v = math.log1p(amp / (norm_O * support_size)) / (zeta * t) if zeta * t > 0 else math.nan
    return LRFit(-fit.slope, fit.stderr, v, amp, fit.r2)

"""Time evolution e^{-iHt}|psi> and Heisenberg-picture operators.

Two paths are provided. The dense path diagonalises H once and is exact to
rounding; it is the oracle for everything else and the only path for
operator (Heisenberg) evolution. The Krylov path runs Lanczos with full
reorthogonalisation and chooses substeps so that the a-posteriori residual
estimate of each step stays below its share of the requested tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigError, NumericalDiagnosticError, ResourceCeilingError
from .pauli import DENSE_CEILING, OperatorMatrix

__all__ = [
    "PropagatorConfig",
    "DenseEvolver",
    "KrylovEvolver",
    "make_evolver",
    "evolve_state",
    "evolve_trajectory",
    "evolve_operator",
    "interaction_picture_V",
    "dense_expm",
    "basis_state",
    "NORM_TOL",
]

NORM_TOL = 1e-10


@dataclass(frozen=True)
class PropagatorConfig:
    method: str = "auto"
    tol: float = 1e-12
    max_krylov_dim: int = 30
    dt: float | None = None

    def __post_init__(self):
        if self.method not in ("dense", "krylov", "auto"):
            raise ConfigError(f"unknown propagator method {self.method!r}")
        if not 0 < self.tol <= 1e-4:
            raise ConfigError("propagator tol must lie in (0, 1e-4]")
        if self.max_krylov_dim < 2:
            raise ConfigError("max_krylov_dim must be at least 2")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("propagator dt must be positive")

    def resolve(self, dim: int) -> str:
        if self.method == "auto":
            return "dense" if dim <= DENSE_CEILING else "krylov"
        return self.method


def basis_state(n_sites: int, bits: str | None = None) -> np.ndarray:
    """Computational basis state; ``bits`` defaults to all zeros."""
    bits = "0" * n_sites if bits is None else bits
    if len(bits) != n_sites or set(bits) - {"0", "1"}:
        raise ConfigError(f"initial state {bits!r} is not a {n_sites}-bit string")
    psi = np.zeros(1 << n_sites, dtype=complex)
    psi[int(bits, 2)] = 1.0
    return psi


def _as_operator(H) -> OperatorMatrix:
    return H if isinstance(H, OperatorMatrix) else OperatorMatrix.wrap(H)


def _check_norm(psi_in, psi_out):
    n_in = np.linalg.norm(psi_in)
    n_out = np.linalg.norm(psi_out)
    if abs(n_out - n_in) > NORM_TOL * max(n_in, 1.0):
        raise NumericalDiagnosticError(f"norm drifted from {n_in:.15f} to {n_out:.15f}", abs(n_out - n_in))


class DenseEvolver:
    """Exact propagation through an eigendecomposition of a hermitian H."""

    def __init__(self, H):
        H = _as_operator(H)
        if H.dim > DENSE_CEILING:
            raise ResourceCeilingError(f"dense propagation limited to dimension {DENSE_CEILING}, got {H.dim}")
        if not H.hermitian:
            raise ConfigError("Hamiltonian must be hermitian")
        a = H.toarray()
        if np.iscomplexobj(a) and not np.any(a.imag):
            a = a.real
        self.H = H
        self.energies, self.vectors = np.linalg.eigh(a)

    @property
    def dim(self):
        return self.H.dim

    def evolve(self, psi: np.ndarray, t: float) -> np.ndarray:
        if t == 0:
            return np.array(psi, dtype=complex, copy=True)
        coeff = self.vectors.conj().T @ psi
        out = self.vectors @ (np.exp(-1j * self.energies * t) * coeff)
        _check_norm(psi, out)
        return out

    def trajectory(self, psi: np.ndarray, times) -> np.ndarray:
        """States at every time in ``times``, shape ``(len(times), dim)``."""
        times = np.asarray(times, dtype=float)
        coeff = self.vectors.conj().T @ psi
        phases = np.exp(-1j * np.outer(times, self.energies)) * coeff
        if np.isrealobj(self.vectors):
            # two real products instead of one complex product on a cast copy
            vt = self.vectors.T
            out = np.ascontiguousarray(phases.real) @ vt + 1j * (np.ascontiguousarray(phases.imag) @ vt)
        else:
            out = phases @ self.vectors.T
        norms = np.linalg.norm(out, axis=1)
        if np.max(np.abs(norms - np.linalg.norm(psi)), initial=0.0) > NORM_TOL:
            raise NumericalDiagnosticError("norm drift along dense trajectory")
        return out

    def unitary(self, t: float) -> np.ndarray:
        return (self.vectors * np.exp(-1j * self.energies * t)) @ self.vectors.conj().T

    def heisenberg(self, O, t: float) -> np.ndarray:
        """Dense matrix of e^{iHt} O e^{-iHt}."""
        o = O.toarray() if isinstance(O, OperatorMatrix) else np.asarray(O)
        U = self.unitary(t)
        return U.conj().T @ o @ U


class KrylovEvolver:
    """Lanczos propagation with adaptive substeps."""

    def __init__(self, H, cfg: PropagatorConfig | None = None):
        self.H = _as_operator(H)
        if not self.H.hermitian:
            raise ConfigError("Hamiltonian must be hermitian")
        self.cfg = cfg or PropagatorConfig()
        # matvecs only: CSR avoids recasting a dense real H to complex every step
        self._data = self.H.tocsr()
        self._last_tau: float | None = None

    @property
    def dim(self):
        return self.H.dim

    def _basis(self, v: np.ndarray):
        m = min(self.cfg.max_krylov_dim, self.dim)
        beta0 = np.linalg.norm(v)
        basis = np.empty((m + 1, v.size), dtype=complex)
        alpha = np.zeros(m)
        beta = np.zeros(m)
        basis[0] = v / beta0
        scale = 0.0
        for j in range(m):
            w = self._data @ basis[j]
            alpha[j] = np.vdot(basis[j], w).real
            w = w - alpha[j] * basis[j]
            if j > 0:
                w -= beta[j - 1] * basis[j - 1]
            # two passes of full reorthogonalisation
            for _ in range(2):
                coef = (basis[: j + 1] @ w.conj()).conj()
                w -= coef @ basis[: j + 1]
            beta[j] = np.linalg.norm(w)
            scale = max(scale, abs(alpha[j]), beta[j])
            if beta[j] <= 1e-14 * max(scale, 1.0):
                # invariant subspace found: the projection is exact
                return basis[: j + 1], alpha[: j + 1], beta[: j + 1], beta0, True
            basis[j + 1] = w / beta[j]
        return basis[:m], alpha, beta, beta0, False

    def _step(self, psi: np.ndarray, tau_try: float, tol_rate: float):
        """Advance psi by a substep no longer than ``tau_try``; returns (psi, tau)."""
        basis, alpha, beta, beta0, exact = self._basis(psi)
        k = len(alpha)
        if k == self.dim:
            exact = True  # the basis spans the whole space
        T = np.diag(alpha).astype(complex)
        if k > 1:
            off = np.arange(k - 1)
            T[off, off + 1] = T[off + 1, off] = beta[: k - 1]
        tau = tau_try
        resid = math.inf
        for _ in range(64):
            # expm of the banded T keeps the small trailing entries of y
            # accurate, unlike a sum over eigenvectors
            y = sla.expm(-1j * tau * T)[:, 0]
            resid = 0.0 if exact else beta0 * beta[k - 1] * abs(y[k - 1])
            if resid <= tol_rate * abs(tau):
                return beta0 * (y @ basis), tau
            tau *= 0.5
        raise NumericalDiagnosticError(
            f"Krylov step did not reach tolerance after 64 halvings (residual {resid:.3e})", resid
        )

    def evolve(self, psi: np.ndarray, t: float, *, _total: float | None = None) -> np.ndarray:
        total = abs(t) if _total is None else _total
        if t == 0:
            return np.array(psi, dtype=complex, copy=True)
        tol_rate = self.cfg.tol / max(total, 1e-300)
        out = np.array(psi, dtype=complex, copy=True)
        remaining = float(t)
        sign = 1.0 if t > 0 else -1.0
        tau = self._last_tau or abs(t)
        while abs(remaining) > 0:
            tau = min(tau, abs(remaining))
            if self.cfg.dt is not None:
                tau = min(tau, self.cfg.dt)
            out, taken = self._step(out, sign * tau, tol_rate)
            taken = abs(taken)
            remaining -= sign * taken
            if abs(remaining) <= 1e-15 * abs(t):
                remaining = 0.0
            tau = 2 * taken if taken == tau else taken
        self._last_tau = tau
        _check_norm(psi, out)
        return out

    def iter_states(self, psi: np.ndarray, times):
        """Yield ``(index, state)`` in increasing-time order without storing the trajectory."""
        times = np.asarray(times, dtype=float)
        order = np.argsort(times, kind="stable")
        total = float(np.max(np.abs(times), initial=0.0)) or 1.0
        current, t_now = np.asarray(psi, dtype=complex), 0.0
        for idx in order:
            t = times[idx]
            if t != t_now:
                # share the global tolerance among the segments
                current = self.evolve(current, t - t_now, _total=total)
                t_now = t
            yield int(idx), current

    def trajectory(self, psi: np.ndarray, times) -> np.ndarray:
        out = np.empty((len(np.atleast_1d(times)), self.dim), dtype=complex)
        for idx, state in self.iter_states(psi, times):
            out[idx] = state
        return out


def make_evolver(H, cfg: PropagatorConfig | None = None):
    cfg = cfg or PropagatorConfig()
    H = _as_operator(H)
    return DenseEvolver(H) if cfg.resolve(H.dim) == "dense" else KrylovEvolver(H, cfg)


def evolve_state(H, psi: np.ndarray, t: float, cfg: PropagatorConfig | None = None) -> np.ndarray:
    """e^{-iHt} psi."""
    H = _as_operator(H)
    if psi.shape != (H.dim,):
        raise ConfigError(f"state of length {psi.shape} does not match dimension {H.dim}")
    return make_evolver(H, cfg).evolve(psi, t)


def evolve_trajectory(H, psi: np.ndarray, times, cfg: PropagatorConfig | None = None) -> np.ndarray:
    """States e^{-iHt} psi for every t in ``times``."""
    H = _as_operator(H)
    if psi.shape != (H.dim,):
        raise ConfigError(f"state of length {psi.shape} does not match dimension {H.dim}")
    return make_evolver(H, cfg).trajectory(psi, times)


def evolve_operator(H, O, t: float, cfg: PropagatorConfig | None = None) -> OperatorMatrix:
    """Heisenberg-picture operator e^{iHt} O e^{-iHt} (dense only)."""
    H = _as_operator(H)
    O = _as_operator(O)
    if H.dim > DENSE_CEILING:
        raise ResourceCeilingError(f"operator evolution limited to dimension {DENSE_CEILING}")
    if O.dim != H.dim:
        raise ConfigError("operator and Hamiltonian dimensions differ")
    out = DenseEvolver(H).heisenberg(O, t)
    if O.hermitian:
        out = 0.5 * (out + out.conj().T)
    return OperatorMatrix(out, O.hermitian)


def interaction_picture_V(H, V, s: float, cfg: PropagatorConfig | None = None) -> OperatorMatrix:
    """V(s) = e^{iHs} V e^{-iHs}."""
    return evolve_operator(H, V, s, cfg)


def dense_expm(H, t: float) -> np.ndarray:
    """e^{-iHt} by scaling and squaring; independent of the eigensolver path."""
    H = _as_operator(H)
    a = H.toarray() if not sp.issparse(H.data) else H.data.toarray()
    return sla.expm(-1j * t * a)

"""Lattice Hamiltonians, perturbation sets and light-cone truncation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ResourceCeilingError
from .noise import NoiseSample
from .pauli import DENSE_CEILING, LocalOperator, OperatorMatrix, PauliString, parse_operator, spectral_norm, to_matrix

__all__ = [
    "DEFAULT_MAX_SITES",
    "LatticeSpec",
    "Term",
    "HamiltonianSpec",
    "PerturbationSet",
    "PerturbedHamiltonian",
    "local_norm",
    "build_heisenberg",
    "build_heisenberg_chain",
    "build_custom",
    "single_site_perturbations",
    "attach_noise",
    "truncate_to_lightcone",
    "lr_radius",
]

DEFAULT_MAX_SITES = 18


@dataclass(frozen=True)
class LatticeSpec:
    L: int
    d: int = 1
    boundary: str = "open"
    max_sites: int = DEFAULT_MAX_SITES

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError("lattice dimension must be 1 or 2")
        if self.boundary not in ("open", "periodic"):
            raise ConfigError(f"unknown boundary {self.boundary!r}")
        if self.L < 1:
            raise ConfigError("L must be positive")
        if self.N > self.max_sites:
            raise ResourceCeilingError(f"N = {self.N} sites exceeds the configured maximum {self.max_sites}")

    @property
    def N(self) -> int:
        return self.L**self.d

    def coords(self, site: int) -> tuple[int, ...]:
        if self.d == 1:
            return (site,)
        return divmod(site, self.L)

    def site(self, coords) -> int:
        coords = [c % self.L for c in coords]
        return coords[0] if self.d == 1 else coords[0] * self.L + coords[1]

    def distance(self, a: int, b: int) -> int:
        """Graph distance between two sites."""
        total = 0
        for ca, cb in zip(self.coords(a), self.coords(b)):
            dx = abs(ca - cb)
            if self.boundary == "periodic":
                dx = min(dx, self.L - dx)
            total += dx
        return total

    def set_distance(self, a, b) -> float:
        """Minimum pairwise distance; infinite if either set is empty."""
        if not a or not b:
            return math.inf
        return min(self.distance(x, y) for x in a for y in b)

    @property
    def diameter(self) -> int:
        return max(self.distance(0, s) for s in range(self.N)) if self.boundary == "periodic" else self.d * (self.L - 1)

    def bonds(self) -> list[tuple[int, int]]:
        """Nearest-neighbour pairs, each listed once."""
        out = []
        for s in range(self.N):
            c = self.coords(s)
            for axis in range(self.d):
                nc = list(c)
                nc[axis] += 1
                if nc[axis] >= self.L:
                    if self.boundary == "open" or self.L < 3:
                        continue
                out.append((s, self.site(nc)))
        return out


def local_norm(op: LocalOperator) -> float:
    """Spectral norm of an operator, computed on its support only."""
    sites = sorted(op.support)
    if not sites:
        return float(sum(abs(c) for c, _ in op.terms))
    relabel = {s: i for i, s in enumerate(sites)}
    compact = LocalOperator(
        (c, PauliString(tuple((relabel[s], l) for s, l in string.sites))) for c, string in op.terms
    )
    return spectral_norm(to_matrix(compact, len(sites), sparse=False))


@dataclass(frozen=True)
class Term:
    center: int
    op: LocalOperator


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """H = sum of local terms H_alpha, each within distance r0 of its center."""

    lattice: LatticeSpec
    terms: tuple[Term, ...]
    r0: int = 1
    strength_bound: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for term in self.terms:
            if term.op.max_site >= self.lattice.N:
                raise ConfigError(f"term {term.op} acts outside the lattice")
            reach = max((self.lattice.distance(term.center, s) for s in term.op.support), default=0)
            if reach > self.r0:
                raise ConfigError(f"term {term.op} reaches distance {reach} > r0 = {self.r0} from its center")
        if self.strength_bound is None:
            zeta = max((local_norm(t.op) for t in self.terms), default=0.0)
            object.__setattr__(self, "strength_bound", zeta)

    @property
    def N(self) -> int:
        return self.lattice.N

    @property
    def operator(self) -> LocalOperator:
        return sum((t.op for t in self.terms), LocalOperator())

    def matrix(self, sparse: bool | None = None) -> OperatorMatrix:
        key = ("H", sparse)
        if key not in self._cache:
            self._cache[key] = to_matrix(self.operator, self.N, sparse=sparse)
        return self._cache[key]


@dataclass(frozen=True, eq=False)
class PerturbationSet:
    """Local perturbations V_i with ||V_i|| <= 1, each anchored at a site."""

    items: tuple[tuple[LocalOperator, int], ...]
    max_per_site: int = 1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        counts: dict[int, int] = {}
        for op, anchor in self.items:
            if local_norm(op) > 1 + 1e-12:
                raise ConfigError(f"perturbation {op} has norm above 1")
            counts[anchor] = counts.get(anchor, 0) + 1
            if counts[anchor] > self.max_per_site:
                raise ConfigError(f"site {anchor} anchors more than {self.max_per_site} perturbations")

    @property
    def count(self) -> int:
        return len(self.items)

    @property
    def operators(self) -> list[LocalOperator]:
        return [op for op, _ in self.items]

    def matrices(self, n_sites: int, sparse: bool | None = None) -> list[OperatorMatrix]:
        key = (n_sites, sparse)
        if key not in self._cache:
            self._cache[key] = [to_matrix(op, n_sites, sparse=sparse) for op, _ in self.items]
        return self._cache[key]


@dataclass(frozen=True, eq=False)
class PerturbedHamiltonian:
    """H' = H + sum_i g_i V_i."""

    base: HamiltonianSpec
    perturbations: PerturbationSet
    gs: np.ndarray
    sample: NoiseSample | None = None

    def __post_init__(self):
        gs = np.asarray(self.gs, dtype=float)
        if gs.shape != (self.perturbations.count,):
            raise ConfigError(f"noise sample length {gs.size} != perturbation count {self.perturbations.count}")
        object.__setattr__(self, "gs", gs)

    @property
    def N(self) -> int:
        return self.base.N

    def perturbation_matrix(self, sparse: bool | None = None) -> OperatorMatrix:
        """Matrix of sum_i g_i V_i."""
        acc = self._sparse_sum()
        if sparse is False or (sparse is None and acc.shape[0] <= DENSE_CEILING):
            acc = acc.toarray()
        return OperatorMatrix(acc, hermitian=True)

    def _sparse_sum(self):
        # accumulate in CSR: each V_i is a signed permutation-like matrix
        mats = self.perturbations.matrices(self.N, True)
        acc = sp.csr_matrix((1 << self.N, 1 << self.N), dtype=float)
        for g, m in zip(self.gs, mats):
            acc = acc + g * m.data
        return acc

    def matrix(self, sparse: bool | None = None) -> OperatorMatrix:
        base = self.base.matrix(sparse)
        pert = self._sparse_sum()
        data = base.data + pert if base.is_sparse else base.data + pert.toarray()
        return OperatorMatrix(sp.csr_matrix(data) if base.is_sparse else np.asarray(data), hermitian=True)


def build_heisenberg(lattice: LatticeSpec, J: float, h: float):
    """-J sum_<ij> sigma_i . sigma_j + h sum_i X_i with perturbations V_i = X_i."""
    if lattice.N < 2:
        raise ConfigError("Heisenberg model needs N >= 2 sites")
    terms = []
    for a, b in lattice.bonds():
        op = LocalOperator((-J, PauliString.from_mapping({a: l, b: l})) for l in ("X", "Y", "Z"))
        terms.append(Term(min(a, b), op))
    for s in range(lattice.N):
        terms.append(Term(s, LocalOperator.pauli("X", s, h)))
    zeta = max(3 * abs(J), abs(h))
    spec = HamiltonianSpec(lattice, tuple(t for t in terms if not t.op.is_zero), r0=1, strength_bound=zeta)
    return spec, single_site_perturbations(lattice, "X")


def build_heisenberg_chain(N: int, J: float, h: float, boundary: str = "open"):
    """Heisenberg XXX chain with a uniform X field; returns (spec, perturbations)."""
    if N < 2:
        raise ConfigError(f"Heisenberg chain needs N >= 2, got N = {N}")
    return build_heisenberg(LatticeSpec(N, 1, boundary), J, h)


def build_custom(lattice: LatticeSpec, term_strings, r0: int | None = None, perturbation: str = "X"):
    """Hamiltonian from operator strings, one term per string centred at its lowest site."""
    terms = []
    for text in term_strings:
        op = parse_operator(text)
        if op.max_site >= lattice.N:
            raise ConfigError(f"custom term {text!r} acts outside the lattice")
        center = min(op.support) if op.support else 0
        terms.append(Term(center, op))
    if r0 is None:
        r0 = max(
            (max((lattice.distance(t.center, s) for s in t.op.support), default=0) for t in terms),
            default=0,
        )
    spec = HamiltonianSpec(lattice, tuple(terms), r0=r0)
    return spec, single_site_perturbations(lattice, perturbation)


def single_site_perturbations(lattice: LatticeSpec, letter: str = "X") -> PerturbationSet:
    return PerturbationSet(tuple((LocalOperator.pauli(letter, s), s) for s in range(lattice.N)))


def attach_noise(spec: HamiltonianSpec, pert: PerturbationSet, sample) -> PerturbedHamiltonian:
    """Form H' from a :class:`NoiseSample` or a plain vector of g values."""
    if isinstance(sample, NoiseSample):
        return PerturbedHamiltonian(spec, pert, sample.gs, sample)
    return PerturbedHamiltonian(spec, pert, np.asarray(sample, dtype=float))


def truncate_to_lightcone(obj, S_O, R: float):
    """Keep only terms (and perturbations) at distance < R from ``S_O``."""
    if R < 0:
        raise ConfigError("truncation radius must be non-negative")
    S_O = frozenset(S_O)
    if not S_O:
        raise ConfigError("observable support must be non-empty")
    if isinstance(obj, PerturbedHamiltonian):
        base = truncate_to_lightcone(obj.base, S_O, R)
        lat = obj.base.lattice
        keep = [i for i, (op, _) in enumerate(obj.perturbations.items) if lat.set_distance(op.support, S_O) < R]
        pert = PerturbationSet(
            tuple(obj.perturbations.items[i] for i in keep), obj.perturbations.max_per_site
        )
        return PerturbedHamiltonian(base, pert, obj.gs[keep])
    if not isinstance(obj, HamiltonianSpec):
        raise TypeError(f"cannot truncate {type(obj).__name__}")
    lat = obj.lattice
    kept = tuple(t for t in obj.terms if lat.set_distance(t.op.support, S_O) < R)
    return HamiltonianSpec(lat, kept, obj.r0, obj.strength_bound)


def lr_radius(t: float, delta: float, mu: float, v: float, zeta: float) -> float:
    """Light-cone radius (v zeta t + ln(1/delta)) / mu."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return (v * zeta * t + math.log(1.0 / delta)) / mu

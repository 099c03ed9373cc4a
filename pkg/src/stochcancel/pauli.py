"""Pauli-string algebra on qubit lattices and conversion to matrices.

Basis convention: site 0 is the most significant bit, so the matrix of a
string is ``kron(P_0, P_1, ..., P_{n-1})``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from numbers import Number
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalDiagnosticError

__all__ = [
    "DENSE_CEILING",
    "PRUNE_TOL",
    "PauliString",
    "LocalOperator",
    "OperatorMatrix",
    "multiply",
    "commutator",
    "to_matrix",
    "support",
    "spectral_norm",
    "parse_operator",
]

#: Largest Hilbert-space dimension handled with dense storage.
DENSE_CEILING = 2**10
#: Coefficients smaller than this are dropped after arithmetic.
PRUNE_TOL = 1e-14

_LETTERS = ("X", "Y", "Z")
_ORDER = {"X": 0, "Y": 1, "Z": 2}

# (a, b) -> (phase, c) with a*b = phase*c, for a != b
_PRODUCT = {
    ("X", "Y"): (1j, "Z"),
    ("Y", "Z"): (1j, "X"),
    ("Z", "X"): (1j, "Y"),
    ("Y", "X"): (-1j, "Z"),
    ("Z", "Y"): (-1j, "X"),
    ("X", "Z"): (-1j, "Y"),
}


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-site Paulis; identity on unlisted sites."""

    sites: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        prev = -1
        for site, letter in self.sites:
            if letter not in _ORDER:
                raise ValueError(f"invalid Pauli letter {letter!r}")
            if not isinstance(site, (int, np.integer)) or site <= prev:
                raise ValueError("site indices must be strictly increasing non-negative ints")
            prev = site

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, str]) -> "PauliString":
        items = sorted((int(s), l.upper()) for s, l in mapping.items() if l.upper() != "I")
        return cls(tuple(items))

    @classmethod
    def single(cls, letter: str, site: int) -> "PauliString":
        return cls.from_mapping({site: letter})

    @property
    def support(self) -> frozenset[int]:
        return frozenset(s for s, _ in self.sites)

    @property
    def is_identity(self) -> bool:
        return not self.sites

    @property
    def max_site(self) -> int:
        return self.sites[-1][0] if self.sites else -1

    def sort_key(self):
        return tuple((s, _ORDER[l]) for s, l in self.sites)

    def commutes_with(self, other: "PauliString") -> bool:
        mine = dict(self.sites)
        clashes = sum(1 for s, l in other.sites if s in mine and mine[s] != l)
        return clashes % 2 == 0

    def __str__(self):
        if not self.sites:
            return "I"
        return "*".join(f"{l}{s}" for s, l in self.sites)


def multiply(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    """Return ``(phase, c)`` with ``a @ b == phase * c`` and phase in {±1, ±i}."""
    phase = 1 + 0j
    out = dict(a.sites)
    for site, lb in b.sites:
        la = out.get(site)
        if la is None:
            out[site] = lb
        elif la == lb:
            del out[site]
        else:
            ph, lc = _PRODUCT[(la, lb)]
            phase *= ph
            out[site] = lc
    return phase, PauliString(tuple(sorted(out.items())))


class LocalOperator:
    """Weighted sum of Pauli strings in canonical merged form.

    Terms are sorted by site/letter key, duplicates merged and coefficients
    with magnitude below :data:`PRUNE_TOL` removed. Instances are immutable.
    """

    __slots__ = ("_terms",)

    def __init__(self, terms: Iterable[tuple[complex, PauliString]] = ()):
        acc: dict[PauliString, complex] = {}
        for coef, string in terms:
            acc[string] = acc.get(string, 0j) + complex(coef)
        kept = [(c, s) for s, c in acc.items() if abs(c) >= PRUNE_TOL]
        kept.sort(key=lambda cs: cs[1].sort_key())
        object.__setattr__(self, "_terms", tuple(kept))

    def __setattr__(self, name, value):
        raise AttributeError("LocalOperator is immutable")

    @property
    def terms(self) -> tuple[tuple[complex, PauliString], ...]:
        return self._terms

    @classmethod
    def pauli(cls, letter: str, site: int, coef: complex = 1.0) -> "LocalOperator":
        return cls([(coef, PauliString.single(letter, site))])

    @classmethod
    def identity(cls, coef: complex = 1.0) -> "LocalOperator":
        return cls([(coef, PauliString())])

    @classmethod
    def parse(cls, text: str) -> "LocalOperator":
        return parse_operator(text)

    @property
    def is_zero(self) -> bool:
        return not self._terms

    @property
    def support(self) -> frozenset[int]:
        return support(self)

    @property
    def max_site(self) -> int:
        return max((s.max_site for _, s in self._terms), default=-1)

    @property
    def has_real_coefficients(self) -> bool:
        return all(c.imag == 0 for c, _ in self._terms)

    def coefficient_norm(self) -> float:
        """Sum of |coefficients|; an upper bound on the spectral norm."""
        return float(sum(abs(c) for c, _ in self._terms))

    def to_matrix(self, n_sites: int) -> "OperatorMatrix":
        return to_matrix(self, n_sites)

    def __add__(self, other):
        if isinstance(other, Number):
            other = LocalOperator.identity(other)
        if not isinstance(other, LocalOperator):
            return NotImplemented
        return LocalOperator(self._terms + other._terms)

    __radd__ = __add__

    def __neg__(self):
        return LocalOperator((-c, s) for c, s in self._terms)

    def __sub__(self, other):
        if isinstance(other, Number):
            other = LocalOperator.identity(other)
        if not isinstance(other, LocalOperator):
            return NotImplemented
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Number):
            return LocalOperator((c * other, s) for c, s in self._terms)
        if not isinstance(other, LocalOperator):
            return NotImplemented
        out = []
        for ca, sa in self._terms:
            for cb, sb in other._terms:
                ph, prod = multiply(sa, sb)
                out.append((ca * cb * ph, prod))
        return LocalOperator(out)

    def __rmul__(self, other):
        if isinstance(other, Number):
            return self * other
        return NotImplemented

    def __eq__(self, other):
        if not isinstance(other, LocalOperator):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(self._terms)

    def __repr__(self):
        return f"LocalOperator({str(self)!r})"

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for i, (c, s) in enumerate(self._terms):
            if c.imag == 0 and c.real < 0:
                sep, c = " - ", -c
            else:
                sep = " + "
            text = f"{_format_coef(c)}*{s}"
            parts.append(("-" + text if sep == " - " else text) if i == 0 else sep + text)
        return "".join(parts)


def _format_coef(c: complex) -> str:
    if c.imag == 0:
        return repr(float(c.real))
    return f"({c.real!r}{c.imag:+.17g}j)"


def commutator(a: LocalOperator, b: LocalOperator) -> LocalOperator:
    """``[a, b] = ab - ba`` in canonical form; commuting pairs contribute exactly zero."""
    out = []
    for ca, sa in a.terms:
        for cb, sb in b.terms:
            if sa.commutes_with(sb):
                continue
            ph, prod = multiply(sa, sb)
            out.append((2 * ca * cb * ph, prod))
    return LocalOperator(out)


def support(op: LocalOperator) -> frozenset[int]:
    sites: set[int] = set()
    for _, s in op.terms:
        sites.update(s.support)
    return frozenset(sites)


# ---------------------------------------------------------------------------
# text notation
# ---------------------------------------------------------------------------

_FACTOR = re.compile(r"^([XYZI])(\d*)$")


def _split_terms(text: str) -> list[str]:
    terms, buf, depth = [], [], 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch in "+-" and depth == 0 and buf:
            prev = "".join(buf).rstrip()
            exponent = prev[-1:] in ("e", "E") and len(prev) > 1 and (prev[-2].isdigit() or prev[-2] == ".")
            if not exponent and prev and prev[-1] != "*":
                terms.append(prev)
                buf = []
        buf.append(ch)
    if buf:
        terms.append("".join(buf))
    return [t.strip() for t in terms if t.strip()]


def parse_operator(text: str) -> LocalOperator:
    """Parse notation such as ``"1.0*Z0*Z1 + 0.5*X3 - 2e-3*Y2"``.

    Factors are ``*``-separated; Pauli factors are a letter followed by the
    site index. Numeric factors may be floats, scientific notation or
    parenthesised complex literals.
    """
    if not text or not text.strip():
        raise ConfigError("empty operator string")
    out = []
    for raw in _split_terms(text.replace(" ", "")):
        sign = 1.0
        while raw and raw[0] in "+-":
            if raw[0] == "-":
                sign = -sign
            raw = raw[1:]
        if not raw:
            raise ConfigError(f"malformed operator string {text!r}")
        coef: complex = sign
        string = PauliString()
        for factor in raw.split("*"):
            m = _FACTOR.match(factor)
            if m:
                letter, site = m.groups()
                if letter == "I":
                    continue
                if not site:
                    raise ConfigError(f"Pauli factor {factor!r} lacks a site index")
                ph, string = multiply(string, PauliString.single(letter, int(site)))
                coef *= ph
                continue
            try:
                coef *= complex(factor.strip("()")) if "j" in factor else float(factor)
            except ValueError:
                raise ConfigError(f"cannot parse factor {factor!r} in {text!r}") from None
        out.append((coef, string))
    return LocalOperator(out)


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Matrix of an operator on ``n_sites`` qubits, dense or CSR."""

    data: np.ndarray | sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        dim = self.data.shape[0]
        if self.data.shape != (dim, dim) or dim < 1 or dim & (dim - 1):
            raise ValueError(f"operator dimension must be a power of two, got {self.data.shape}")
        if self.hermitian:
            diff = self.data - self.data.conj().T
            dev = abs(diff).max() if sp.issparse(diff) else np.max(np.abs(diff), initial=0.0)
            if dev > 1e-12:
                raise ValueError(f"matrix flagged hermitian deviates by {dev:.3e}")

    @classmethod
    def wrap(cls, data, hermitian: bool | None = None) -> "OperatorMatrix":
        if isinstance(data, OperatorMatrix):
            return data
        if not sp.issparse(data):
            data = np.asarray(data)
        else:
            data = sp.csr_matrix(data)
        if hermitian is None:
            diff = data - data.conj().T
            dev = abs(diff).max() if sp.issparse(diff) else np.max(np.abs(diff), initial=0.0)
            hermitian = bool(dev <= 1e-12)
        return cls(data, hermitian)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_sites(self) -> int:
        return self.dim.bit_length() - 1

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.data)

    def toarray(self) -> np.ndarray:
        return self.data.toarray() if self.is_sparse else np.asarray(self.data)

    def tocsr(self) -> sp.csr_matrix:
        return self.data if self.is_sparse else sp.csr_matrix(self.data)

    def __matmul__(self, other):
        return self.data @ other

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(_combine(self.data, other.data, 1.0), self.hermitian and other.hermitian)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(_combine(self.data, other.data, -1.0), self.hermitian and other.hermitian)

    def expectation(self, psi: np.ndarray) -> complex:
        return complex(np.vdot(psi, self.data @ psi))


def _combine(a, b, sign):
    if sp.issparse(a) and sp.issparse(b):
        return sp.csr_matrix(a + sign * b)
    if sp.issparse(a):
        a = a.toarray()
    if sp.issparse(b):
        b = b.toarray()
    return np.asarray(a + sign * b)


def _string_columns(string: PauliString, n_sites: int, cols: np.ndarray):
    """Row indices and values of a unit-coefficient string for each column."""
    xmask = zmask = 0
    n_y = 0
    for site, letter in string.sites:
        bit = 1 << (n_sites - 1 - site)
        if letter in ("X", "Y"):
            xmask |= bit
        if letter in ("Y", "Z"):
            zmask |= bit
        n_y += letter == "Y"
    rows = cols ^ xmask
    # Y = i X Z, so the value is i^{n_Y} (-1)^{popcount(col & zmask)}
    parity = np.zeros(cols.shape, dtype=np.int64)
    masked = cols & zmask
    while zmask:
        parity ^= masked & 1
        masked = masked >> 1
        zmask >>= 1
    vals = (1j**n_y) * (1 - 2 * parity)
    return rows, vals


def to_matrix(op: LocalOperator, n_sites: int, *, sparse: bool | None = None) -> OperatorMatrix:
    """Kronecker-product expansion of ``op`` on ``n_sites`` qubits.

    Storage is dense up to :data:`DENSE_CEILING` unless ``sparse`` forces a
    choice. Real-valued results are stored with a real dtype.
    """
    if n_sites < 1:
        raise ValueError("n_sites must be positive")
    if op.max_site >= n_sites:
        raise ValueError(f"operator acts on site {op.max_site} outside 0..{n_sites - 1}")
    dim = 1 << n_sites
    if sparse is None:
        sparse = dim > DENSE_CEILING
    cols = np.arange(dim, dtype=np.int64)
    all_rows, all_cols, all_vals = [], [], []
    for coef, string in op.terms:
        rows, vals = _string_columns(string, n_sites, cols)
        all_rows.append(rows)
        all_cols.append(cols)
        all_vals.append(coef * vals)
    if all_vals:
        vals = np.concatenate(all_vals)
        rows = np.concatenate(all_rows)
        cc = np.concatenate(all_cols)
    else:
        vals = np.zeros(0, complex)
        rows = cc = np.zeros(0, np.int64)
    mat = sp.coo_matrix((vals, (rows, cc)), shape=(dim, dim)).tocsr()
    mat.sum_duplicates()
    if mat.nnz and np.all(mat.data.imag == 0):
        mat = mat.real.tocsr()
    mat.eliminate_zeros()
    data = mat if sparse else mat.toarray()
    return OperatorMatrix(data, hermitian=op.has_real_coefficients)


def spectral_norm(m, tol: float = 1e-10, maxiter: int | None = None) -> float:
    """Largest singular value.

    Exact for dimension up to :data:`DENSE_CEILING`; above it an ARPACK
    Lanczos iteration (on ``m`` if hermitian, else on ``m^dagger m``) is
    used with relative tolerance ``tol``.
    """
    m = OperatorMatrix.wrap(m)
    if m.dim <= DENSE_CEILING:
        a = m.toarray()
        if not a.size or not np.any(a):
            return 0.0
        if m.hermitian:
            return float(np.max(np.abs(np.linalg.eigvalsh(a))))
        return float(np.linalg.norm(a, 2))
    data = m.tocsr()
    if data.nnz == 0:
        return 0.0
    try:
        if m.hermitian:
            vals = spla.eigsh(data, k=1, which="LM", tol=tol, maxiter=maxiter, return_eigenvectors=False)
            return float(abs(vals[0]))
        vals = spla.svds(data, k=1, tol=tol, maxiter=maxiter, return_singular_vectors=False)
        return float(vals[0])
    except spla.ArpackNoConvergence as exc:
        raise NumericalDiagnosticError("spectral norm iteration did not converge") from exc

"""Sparse operators on N three-level atoms ⊗ one truncated oscillator.

Basis layout (fixed for the whole package): atoms are the major index and the
oscillator the minor one,

    index = atomic_index * (n_max + 1) + n,
    atomic_index = sum_j level_j * 3**(N - 1 - j),

with atom ``j = 0`` most significant and level order ``L=0, R=1, E=2``.
Atom indices are zero-based everywhere in the package.

Energies are in units of the oscillator coupling ``g`` (``g = 1``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .stabilizer import Stabilizer, plus_minus_eigenstates

LEVELS = {"L": 0, "R": 1, "E": 2}
DROP_TOL = 1e-15


@dataclass(frozen=True)
class SystemDims:
    n_atoms: int
    n_max: int = 2

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("need at least one atom")
        if self.n_max < 0:
            raise ValueError("n_max must be non-negative")

    @property
    def n_osc(self) -> int:
        return self.n_max + 1

    @property
    def atomic_dim(self) -> int:
        return 3**self.n_atoms

    @property
    def dim(self) -> int:
        return self.atomic_dim * self.n_osc

    def index(self, levels: Sequence[str] | str, n: int = 0) -> int:
        """Composite index of a product state, e.g. ``dims.index("LR", 1)``."""
        if len(levels) != self.n_atoms:
            raise ValueError(f"expected {self.n_atoms} levels, got {len(levels)}")
        if not 0 <= n <= self.n_max:
            raise ValueError(f"Fock index {n} outside 0..{self.n_max}")
        a = 0
        for ch in levels:
            a = 3 * a + LEVELS[ch]
        return a * self.n_osc + n

    def basis_state(self, levels: Sequence[str] | str, n: int = 0) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(levels, n)] = 1.0
        return v


@dataclass(frozen=True)
class CouplingConfig:
    """Per-atom complex couplings of ``|E><L|`` and ``|E><R|`` to the oscillator."""

    g_L: tuple[complex, ...]
    g_R: tuple[complex, ...]

    def __post_init__(self):
        if len(self.g_L) != len(self.g_R):
            raise ValueError("g_L and g_R must have the same length")
        vals = np.asarray(self.g_L + self.g_R, dtype=complex)
        if not np.all(np.isfinite(vals)):
            raise ValueError("couplings must be finite")

    @classmethod
    def uniform(cls, n_atoms: int, g_L: complex = 0.0, g_R: complex = 1.0) -> "CouplingConfig":
        return cls((complex(g_L),) * n_atoms, (complex(g_R),) * n_atoms)

    @property
    def n_atoms(self) -> int:
        return len(self.g_L)


def canonicalize(op) -> sp.csr_matrix:
    """CSR form with duplicates summed and entries below 1e-15 dropped."""
    op = sp.csr_matrix(op, dtype=complex)
    op.sum_duplicates()
    op.data[np.abs(op.data) < DROP_TOL] = 0
    op.eliminate_zeros()
    op.sort_indices()
    return op


def annihilation(n_max: int) -> sp.csr_matrix:
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    n = np.arange(1, n_max + 1)
    return sp.csr_matrix(
        (np.sqrt(n).astype(complex), (n - 1, n)), shape=(n_max + 1, n_max + 1)
    )


def _embed_atomic(single: sp.spmatrix, j: int, dims: SystemDims) -> sp.csr_matrix:
    if not 0 <= j < dims.n_atoms:
        raise IndexError(f"atom index {j} outside 0..{dims.n_atoms - 1}")
    left = sp.identity(3**j, dtype=complex, format="csr")
    right = sp.identity(3 ** (dims.n_atoms - j - 1) * dims.n_osc, dtype=complex, format="csr")
    return sp.kron(sp.kron(left, single, format="csr"), right, format="csr")


def atomic_operator(j: int, local: np.ndarray, dims: SystemDims) -> sp.csr_matrix:
    """Embed a 3x3 single-atom matrix acting on atom ``j``."""
    return canonicalize(_embed_atomic(sp.csr_matrix(np.asarray(local, dtype=complex)), j, dims))


def atomic_transition(j: int, from_level: str, to_level: str, dims: SystemDims) -> sp.csr_matrix:
    """``|to><from|`` on atom ``j``, identity elsewhere."""
    local = np.zeros((3, 3), dtype=complex)
    local[LEVELS[to_level], LEVELS[from_level]] = 1.0
    return atomic_operator(j, local, dims)


def oscillator_operator(local, dims: SystemDims) -> sp.csr_matrix:
    left = sp.identity(dims.atomic_dim, dtype=complex, format="csr")
    return canonicalize(sp.kron(left, sp.csr_matrix(local), format="csr"))


def excitation_coupling(couplings: CouplingConfig, dims: SystemDims) -> sp.csr_matrix:
    """``sum_j a (g_L[j] |E><L|_j + g_R[j] |E><R|_j)`` without its conjugate."""
    if couplings.n_atoms != dims.n_atoms:
        raise ValueError(
            f"couplings describe {couplings.n_atoms} atoms, system has {dims.n_atoms}"
        )
    a = oscillator_operator(annihilation(dims.n_max), dims)
    raising = sp.csr_matrix((dims.dim, dims.dim), dtype=complex)
    for j in range(dims.n_atoms):
        local = np.zeros((3, 3), dtype=complex)
        local[2, 0] = couplings.g_L[j]
        local[2, 1] = couplings.g_R[j]
        if np.any(local):
            raising = raising + _embed_atomic(sp.csr_matrix(local), j, dims)
    return canonicalize(a @ raising)


def build_H_ah(couplings: CouplingConfig, dims: SystemDims) -> sp.csr_matrix:
    """Atom–oscillator exchange Hamiltonian (Hermitian by construction)."""
    half = excitation_coupling(couplings, dims)
    return canonicalize(half + half.getH())


def build_n_t(dims: SystemDims) -> sp.csr_matrix:
    """Total excitation number ``a†a + sum_j |E><E|_j`` (diagonal)."""
    return sp.diags(_n_t_diagonal(dims).astype(complex), format="csr")


def _n_t_diagonal(dims: SystemDims) -> np.ndarray:
    n_e = np.zeros(dims.atomic_dim, dtype=np.int64)
    levels = np.arange(dims.atomic_dim)
    for _ in range(dims.n_atoms):
        n_e += (levels % 3) == 2
        levels //= 3
    return (n_e[:, None] + np.arange(dims.n_osc)[None, :]).ravel()


def build_n_osc(dims: SystemDims) -> sp.csr_matrix:
    a = annihilation(dims.n_max)
    return oscillator_operator(a.getH() @ a, dims)


def build_n_s(stab: Stabilizer, dims: SystemDims) -> sp.csr_matrix:
    """Count of supported atoms in the -1 eigenstate of their letter or in |E>."""
    if stab.n_atoms != dims.n_atoms:
        raise ValueError("stabilizer length does not match the system")
    if stab.weight < 1:
        raise ValueError("n_s is undefined for the identity word")
    out = sp.csr_matrix((dims.dim, dims.dim), dtype=complex)
    for j in stab.support:
        _, minus = plus_minus_eigenstates(stab.letters[j])
        m = minus.vector()
        local = np.zeros((3, 3), dtype=complex)
        local[:2, :2] = np.outer(m, m.conj())
        local[2, 2] = 1.0
        out = out + _embed_atomic(sp.csr_matrix(local), j, dims)
    return canonicalize(out)


def jump_operators(dims: SystemDims) -> list[tuple[int, str, sp.csr_matrix]]:
    """All ``(j, x, |x><E|_j)`` spontaneous-emission operators."""
    return [
        (j, x, atomic_transition(j, "E", x, dims))
        for j in range(dims.n_atoms)
        for x in ("L", "R")
    ]


def spectrum_by_excitation(H, dims: SystemDims, tol: float = 1e-12) -> dict[int, np.ndarray]:
    """Eigenvalues of ``H`` in each n_t block (H must conserve n_t)."""
    nt = _n_t_diagonal(dims)
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    out = {}
    for value in np.unique(nt):
        idx = np.flatnonzero(nt == value)
        block = Hd[np.ix_(idx, idx)]
        ev = np.linalg.eigvalsh(block)
        ev[np.abs(ev) < tol] = 0.0
        out[int(value)] = np.sort(ev)
    return out


def to_coordinate_text(op) -> str:
    """Coordinate list ``row col re im`` per line, in canonical order."""
    c = canonicalize(op).tocoo()
    lines = [f"# dim {c.shape[0]}"]
    for r, k, v in zip(c.row, c.col, c.data):
        lines.append(f"{r} {k} {v.real:.17g} {v.imag:.17g}")
    return "\n".join(lines) + "\n"


def from_coordinate_text(text: str) -> sp.csr_matrix:
    dim = None
    rows, cols, vals = [], [], []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[:1] == ["dim"]:
                dim = int(parts[1])
            continue
        r, k, re_, im = line.split()
        rows.append(int(r))
        cols.append(int(k))
        vals.append(complex(float(re_), float(im)))
    if dim is None:
        raise ValueError("missing '# dim' header")
    return canonicalize(sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim)))


def spectrum_json(spectrum: dict[int, np.ndarray]) -> str:
    return json.dumps(
        [{"n_t": k, "eigenvalues": [float(x) for x in v]} for k, v in sorted(spectrum.items())],
        indent=2,
    )

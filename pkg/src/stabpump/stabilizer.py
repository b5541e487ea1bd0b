"""Pauli words, stabilizer sets and the projectors and states they define.

Ground-doublet convention used throughout the package: level ``L`` is the
``+1`` eigenstate of Z and ``R`` the ``-1`` eigenstate, so that

    Z = |L><L| - |R><R|,   X = |L><R| + |R><L|,   Y = -i|L><R| + i|R><L|.

Qubit-space objects (2**N vectors and matrices) index atom 1 as the most
significant bit with ``L -> 0`` and ``R -> 1``. They are lifted into the
3**N atomic space by :func:`ground_indices`; the excited level never lies
inside a stabilizer projector.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

PAULI_LETTERS = ("I", "X", "Y", "Z")

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# binary symplectic (x, z) bits per letter
_SYMPLECTIC = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}

_SQRT_HALF = 1.0 / np.sqrt(2.0)

_EIGENSTATES = {
    "Z": ((1.0 + 0j, 0j), (0j, 1.0 + 0j)),
    "X": ((_SQRT_HALF + 0j, _SQRT_HALF + 0j), (_SQRT_HALF + 0j, -_SQRT_HALF + 0j)),
    "Y": ((_SQRT_HALF + 0j, 1j * _SQRT_HALF), (_SQRT_HALF + 0j, -1j * _SQRT_HALF)),
}


class StabilizerError(ValueError):
    """Raised for malformed Pauli words or stabilizer sets."""


@dataclass(frozen=True)
class QubitAmplitudes:
    """Amplitudes ``alpha|L> + beta|R>`` of a single-qubit state."""

    alpha: complex
    beta: complex

    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=complex)


@dataclass(frozen=True)
class Stabilizer:
    """A Pauli word over ``len(letters)`` atoms."""

    letters: tuple[str, ...]

    def __post_init__(self):
        for ch in self.letters:
            if ch not in PAULI_LETTERS:
                raise StabilizerError(f"illegal Pauli letter {ch!r}")

    @property
    def n_atoms(self) -> int:
        return len(self.letters)

    @property
    def support(self) -> tuple[int, ...]:
        """Zero-based indices of the non-identity letters."""
        return tuple(j for j, ch in enumerate(self.letters) if ch != "I")

    @property
    def weight(self) -> int:
        return len(self.support)

    @property
    def text(self) -> str:
        return "".join(self.letters)

    def symplectic(self) -> np.ndarray:
        """Binary vector ``(x_1..x_N, z_1..z_N)``."""
        x = [_SYMPLECTIC[ch][0] for ch in self.letters]
        z = [_SYMPLECTIC[ch][1] for ch in self.letters]
        return np.array(x + z, dtype=np.uint8)

    def commutes_with(self, other: "Stabilizer") -> bool:
        if other.n_atoms != self.n_atoms:
            raise StabilizerError("words act on different numbers of atoms")
        anti = sum(
            1
            for a, b in zip(self.letters, other.letters)
            if a != "I" and b != "I" and a != b
        )
        return anti % 2 == 0

    def qubit_matrix(self) -> sp.csr_matrix:
        """The word as a sparse ``2**N x 2**N`` matrix on the ground doublets."""
        out = sp.identity(1, dtype=complex, format="csr")
        for ch in self.letters:
            out = sp.kron(out, sp.csr_matrix(PAULI_MATRICES[ch]), format="csr")
        return out

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class StabilizerSet:
    members: tuple[Stabilizer, ...]

    def __post_init__(self):
        if self.members:
            n = self.members[0].n_atoms
            if any(s.n_atoms != n for s in self.members):
                raise StabilizerError("stabilizers have inconsistent lengths")

    @property
    def n_atoms(self) -> int:
        if not self.members:
            raise StabilizerError("empty stabilizer set has no atom count")
        return self.members[0].n_atoms

    @property
    def m_count(self) -> int:
        return len(self.members)

    @property
    def words(self) -> list[str]:
        return [s.text for s in self.members]

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, i: int) -> Stabilizer:
        return self.members[i]


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_set`.

    ``anticommuting`` holds zero-based index pairs; ``dependent`` holds the
    index of each member that is a product of earlier ones.
    """

    ok: bool
    anticommuting: list[tuple[int, int]] = field(default_factory=list)
    dependent: list[int] = field(default_factory=list)
    messages: list[str] = field(default_factory=list)

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise StabilizerError("; ".join(self.messages))


def parse_stabilizer(text: str, n_atoms: int | None = None) -> Stabilizer:
    """Parse a word such as ``"XZII"``.

    Whitespace is stripped and lowercase letters are accepted.
    """
    word = text.strip().upper()
    if n_atoms is not None and len(word) != n_atoms:
        raise StabilizerError(
            f"word {text!r} has length {len(word)}, expected {n_atoms}"
        )
    bad = sorted({ch for ch in word if ch not in PAULI_LETTERS})
    if bad:
        raise StabilizerError(f"word {text!r} contains illegal characters {bad}")
    if not word:
        raise StabilizerError("empty Pauli word")
    return Stabilizer(tuple(word))


def make_set(words: Iterable[str | Stabilizer], n_atoms: int | None = None) -> StabilizerSet:
    members = []
    for w in words:
        s = w if isinstance(w, Stabilizer) else parse_stabilizer(w, n_atoms)
        if n_atoms is None:
            n_atoms = s.n_atoms
        elif s.n_atoms != n_atoms:
            raise StabilizerError(f"word {s.text!r} does not act on {n_atoms} atoms")
        members.append(s)
    return StabilizerSet(tuple(members))


def parse_set_text(text: str, n_atoms: int | None = None) -> StabilizerSet:
    """Parse the one-word-per-line text format; blank lines and ``#`` comments are skipped."""
    words = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.append(line)
    return make_set(words, n_atoms)


def _gf2_rank_order(rows: np.ndarray) -> list[int]:
    """Indices of rows that are linearly dependent on the rows before them."""
    basis: list[np.ndarray] = []
    pivots: list[int] = []
    dependent = []
    for i, row in enumerate(rows):
        r = row.copy()
        for b, p in zip(basis, pivots):
            if r[p]:
                r ^= b
        nz = np.flatnonzero(r)
        if nz.size == 0:
            dependent.append(i)
            continue
        basis.append(r)
        pivots.append(int(nz[0]))
    return dependent


def validate_set(sset: StabilizerSet) -> ValidationReport:
    report = ValidationReport(ok=True)
    if len(sset) == 0:
        report.ok = False
        report.messages.append("stabilizer set is empty")
        return report
    members = sset.members
    for a, b in itertools.combinations(range(len(members)), 2):
        if not members[a].commutes_with(members[b]):
            report.anticommuting.append((a, b))
            report.messages.append(
                f"S{a + 1}={members[a]} and S{b + 1}={members[b]} anticommute"
            )
    rows = np.array([s.symplectic() for s in members], dtype=np.uint8)
    for i in _gf2_rank_order(rows):
        report.dependent.append(i)
        report.messages.append(
            f"S{i + 1}={members[i]} is a product of earlier members (or the identity)"
        )
    report.ok = not (report.anticommuting or report.dependent)
    return report


def plus_minus_eigenstates(letter: str) -> tuple[QubitAmplitudes, QubitAmplitudes]:
    """Return the +1 and -1 eigenvectors of a Pauli letter.

    The first nonzero amplitude of each vector is real and positive.
    """
    if letter == "I":
        raise StabilizerError("the identity has no distinguished eigen-pair")
    try:
        plus, minus = _EIGENSTATES[letter]
    except KeyError:
        raise StabilizerError(f"illegal Pauli letter {letter!r}") from None
    return QubitAmplitudes(*plus), QubitAmplitudes(*minus)


def basis_change(letter: str) -> np.ndarray:
    """Unitary ``|+><L| + |-><R|`` mapping the Z eigenbasis onto ``letter``'s."""
    if letter == "I":
        return np.eye(2, dtype=complex)
    plus, minus = plus_minus_eigenstates(letter)
    return np.column_stack([plus.vector(), minus.vector()])


def ground_indices(n_atoms: int) -> np.ndarray:
    """Atomic-space (3**N) index of every ground configuration, in qubit order."""
    idx = np.zeros(1, dtype=np.int64)
    for _ in range(n_atoms):
        # L -> level 0, R -> level 1
        idx = (3 * idx[:, None] + np.array([0, 1])[None, :]).ravel()
    return idx


def embed_qubit_operator(op, n_atoms: int) -> sp.csr_matrix:
    """Lift a ``2**N`` square matrix into the ``3**N`` atomic space (zero on |E>)."""
    op = sp.coo_matrix(op)
    gidx = ground_indices(n_atoms)
    dim = 3**n_atoms
    return sp.csr_matrix((op.data, (gidx[op.row], gidx[op.col])), shape=(dim, dim))


def embed_qubit_state(vec: np.ndarray, n_atoms: int) -> np.ndarray:
    out = np.zeros(3**n_atoms, dtype=complex)
    out[ground_indices(n_atoms)] = vec
    return out


def qubit_projector(sset: StabilizerSet, signs: Sequence[int]) -> sp.csr_matrix:
    """``prod_mu (I + s_mu S_mu) / 2`` on the ``2**N`` qubit space."""
    if len(signs) != len(sset):
        raise StabilizerError(f"expected {len(sset)} signs, got {len(signs)}")
    dim = 2**sset.n_atoms
    proj = sp.identity(dim, dtype=complex, format="csr")
    for s, stab in zip(signs, sset):
        if s not in (1, -1):
            raise StabilizerError(f"sign must be +1 or -1, got {s}")
        factor = (sp.identity(dim, dtype=complex, format="csr") + s * stab.qubit_matrix()) * 0.5
        proj = proj @ factor
    proj.eliminate_zeros()
    return proj.tocsr()


def subspace_projector(sset: StabilizerSet, signs: Sequence[int]) -> sp.csr_matrix:
    """Projector onto ``H(s_1..s_M)`` in the 3**N atomic space."""
    return embed_qubit_operator(qubit_projector(sset, signs), sset.n_atoms)


def target_projector(sset: StabilizerSet) -> sp.csr_matrix:
    return subspace_projector(sset, [1] * len(sset))


def linear_cluster_set(n: int) -> StabilizerSet:
    if n < 2:
        raise StabilizerError("a linear cluster needs at least two atoms")
    words = []
    for j in range(n):
        letters = ["I"] * n
        letters[j] = "X"
        if j > 0:
            letters[j - 1] = "Z"
        if j < n - 1:
            letters[j + 1] = "Z"
        words.append("".join(letters))
    return make_set(words, n)


def linear_cluster_qubit_state(n: int) -> np.ndarray:
    """Linear cluster state on ``2**N`` qubit amplitudes.

    The amplitude of bit string b is ``2**(-N/2) * (-1)**sum_j b_j b_{j+1}``.
    """
    if n < 2:
        raise StabilizerError("a linear cluster needs at least two atoms")
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    phase = np.sum(bits[:, :-1] * bits[:, 1:], axis=1)
    return ((-1.0) ** phase * 2.0 ** (-n / 2)).astype(complex)


def linear_cluster_state(n: int) -> np.ndarray:
    """Linear cluster state embedded in the 3**N atomic space."""
    return embed_qubit_state(linear_cluster_qubit_state(n), n)


def atomic_reduced(rho: np.ndarray, n_atoms: int) -> np.ndarray:
    """Trace out the oscillator from a composite density matrix."""
    dim_a = 3**n_atoms
    if rho.shape[0] % dim_a:
        raise StabilizerError(
            f"density matrix of size {rho.shape[0]} is not a multiple of 3**{n_atoms}"
        )
    n_osc = rho.shape[0] // dim_a
    return np.einsum("anbn->ab", rho.reshape(dim_a, n_osc, dim_a, n_osc))


def fidelity(rho: np.ndarray, target, n_atoms: int) -> float:
    """``tr(rho (P ⊗ I_osc))`` for a projector or pure-state target.

    ``target`` may be a 1-D state vector or a square projector, in either
    the 2**N qubit space or the 3**N atomic space.
    """
    gidx = ground_indices(n_atoms)
    rho_a = atomic_reduced(rho, n_atoms)
    rho_g = rho_a[np.ix_(gidx, gidx)]
    if sp.issparse(target):
        target = target.toarray()
    target = np.asarray(target)
    if target.ndim == 1:
        if target.shape[0] == 3**n_atoms:
            target = target[gidx]
        if target.shape[0] != 2**n_atoms:
            raise StabilizerError(f"target vector has wrong dimension {target.shape[0]}")
        val = np.vdot(target, rho_g @ target)
    else:
        if target.shape[0] == 3**n_atoms:
            target = target[np.ix_(gidx, gidx)]
        if target.shape != (2**n_atoms, 2**n_atoms):
            raise StabilizerError(f"target projector has wrong shape {target.shape}")
        val = np.trace(rho_g @ target)
    return float(np.real(val))


def sign_populations(rho: np.ndarray, sset: StabilizerSet) -> np.ndarray:
    """Population of each member's ``+1`` eigenspace, ``tr(rho (I + S_mu)/2)`` on the ground manifold."""
    n = sset.n_atoms
    gidx = ground_indices(n)
    rho_g = atomic_reduced(rho, n)[np.ix_(gidx, gidx)]
    ground_pop = np.real(np.trace(rho_g))
    out = np.empty(len(sset))
    for mu, stab in enumerate(sset):
        expect = np.real(np.sum(stab.qubit_matrix().multiply(rho_g.T)))
        out[mu] = 0.5 * (ground_pop + expect)
    return out

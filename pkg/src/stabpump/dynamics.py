"""Master-equation integration for the pumped atom–oscillator system.

The generator is

    d rho/dt = -i[H(t), rho] + sum_{j,x} G_x (J rho J† - {J†J, rho}/2),
    J = |x><E|_j,   H(t) = H_ah + sum_tones (w e^{i d t} |E><x|_j + h.c.),

integrated with fixed-step RK4.  The right-hand side works on a dense rho
with sparse operators and uses the effective non-Hermitian Hamiltonian
``K = H - (i/2) sum J†J``, so that for Hermitian rho the coherent part is
``-i (K rho - (K rho)†)`` and only one sparse product is needed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels

from .operators import (
    CouplingConfig,
    SystemDims,
    atomic_operator,
    atomic_transition,
    build_H_ah,
    build_n_osc,
    build_n_t,
    canonicalize,
)
from .stabilizer import (
    StabilizerSet,
    atomic_reduced,
    ground_indices,
    sign_populations,
)

logger = logging.getLogger(__name__)

TRACE_TOL = 1e-6
NEGATIVITY_TOL = 1e-6
POINTS_PER_PERIOD = 32


class IntegrationError(RuntimeError):
    """Numerical abort: trace drift or negativity beyond tolerance."""


@dataclass(frozen=True)
class Tone:
    """One classical drive ``rabi * e^{i detuning t} |E><transition|_atom + h.c.``."""

    atom: int
    transition: str
    rabi: complex
    detuning: float

    def __post_init__(self):
        if self.transition not in ("L", "R"):
            raise ValueError(f"tone transition must be 'L' or 'R', got {self.transition!r}")
        if not (np.isfinite(self.rabi) and np.isfinite(self.detuning)):
            raise ValueError("tone parameters must be finite")


@dataclass(frozen=True)
class Round:
    couplings: CouplingConfig
    tones: tuple[Tone, ...]
    gamma_L: float
    gamma_R: float
    duration: float
    pre_rotation: Mapping[int, np.ndarray] | None = None
    post_rotation: Mapping[int, np.ndarray] | None = None

    def __post_init__(self):
        if self.gamma_L < 0 or self.gamma_R < 0:
            raise ValueError("decay rates must be non-negative")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")


def pump_hamiltonian(tones: Sequence[Tone], t: float, dims: SystemDims) -> sp.csr_matrix:
    out = sp.csr_matrix((dims.dim, dims.dim), dtype=complex)
    for tone in tones:
        op = atomic_transition(tone.atom, tone.transition, "E", dims)
        term = tone.rabi * np.exp(1j * tone.detuning * t) * op
        out = out + term + term.getH()
    return canonicalize(out)


def _group_tones(tones: Sequence[Tone], dims: SystemDims) -> dict[float, sp.csr_matrix]:
    """Sum the raising parts of tones sharing a detuning."""
    groups: dict[float, sp.csr_matrix] = {}
    for tone in tones:
        op = tone.rabi * atomic_transition(tone.atom, tone.transition, "E", dims)
        groups[tone.detuning] = groups.get(tone.detuning, 0) + op
    return {d: canonicalize(op) for d, op in groups.items()}


def rotation_operator(rotations: Mapping[int, np.ndarray], dims: SystemDims) -> sp.csr_matrix:
    """Product of per-atom doublet unitaries, each extended by 1 on |E>."""
    out = sp.identity(dims.dim, dtype=complex, format="csr")
    for j, u in sorted(rotations.items()):
        u = np.asarray(u, dtype=complex)
        if u.shape != (2, 2) or not np.allclose(u.conj().T @ u, np.eye(2), atol=1e-12):
            raise ValueError(f"rotation for atom {j} is not a 2x2 unitary")
        local = np.eye(3, dtype=complex)
        local[:2, :2] = u
        out = out @ atomic_operator(j, local, dims)
    return canonicalize(out)


class LindbladGenerator:
    """Precompiled right-hand side for one round's couplings, tones and decay."""

    def __init__(self, rnd: Round, dims: SystemDims):
        self.dims = dims
        self.round = rnd
        dim = dims.dim
        H_ah = build_H_ah(rnd.couplings, dims)
        self.H_ah = H_ah
        self.jumps: list[tuple[float, sp.csr_matrix]] = []
        decay = sp.csr_matrix((dim, dim), dtype=complex)
        for j in range(dims.n_atoms):
            for x, rate in (("L", rnd.gamma_L), ("R", rnd.gamma_R)):
                if rate > 0:
                    J = atomic_transition(j, "E", x, dims)
                    self.jumps.append((rate, J))
                    decay = decay + rate * (J.getH() @ J)
        K0 = canonicalize(H_ah - 0.5j * decay)
        groups = _group_tones(rnd.tones, dims)
        self.detunings = np.array(sorted(groups), dtype=float)
        terms = [K0]
        for d in self.detunings:
            terms.append(groups[d])
            terms.append(canonicalize(groups[d].getH()))
        self._K, self._coeff_data = _shared_pattern(terms, dim)
        self._indptr = self._K.indptr.astype(np.int64)
        self._indices = self._K.indices.astype(np.int64)
        perms = [_partial_permutation(J) for _, J in self.jumps]
        if any(p is None for p in perms):
            raise ValueError("jump operators must be partial permutations")
        m = dim // 3
        self._jsrc = np.array([p[0] for p in perms], dtype=np.int64).reshape(-1, m)
        self._jdst = np.array([p[1] for p in perms], dtype=np.int64).reshape(-1, m)
        self._jrate = np.array([rate for rate, _ in self.jumps], dtype=float)

    def spectral_radius(self) -> float:
        """Largest |eigenvalue| of H_ah."""
        if self.H_ah.nnz == 0:
            return 0.0
        if self.dims.dim <= 2048:
            return float(np.max(np.abs(np.linalg.eigvalsh(self.H_ah.toarray()))))
        val = spla.eigsh(self.H_ah, k=1, which="LM", return_eigenvectors=False)
        return float(abs(val[0]))

    def omega_fast(self) -> float:
        """Fastest angular frequency the step size must resolve.

        Coherences between dressed states oscillate at up to twice the
        spectral radius of H_ah, which dominates the detunings and rates.
        """
        scales = [1.0, self.round.gamma_L + self.round.gamma_R, 2.0 * self.spectral_radius()]
        if self.detunings.size:
            scales.append(float(np.max(np.abs(self.detunings))))
        return max(scales)

    def effective_hamiltonian(self, t: float) -> sp.csr_matrix:
        """``K(t) = H(t) - (i/2) sum J†J`` sharing one sparsity pattern for all t."""
        coeffs = np.empty(1 + 2 * self.detunings.size, dtype=complex)
        coeffs[0] = 1.0
        phase = np.exp(1j * self.detunings * t)
        coeffs[1::2] = phase
        coeffs[2::2] = phase.conj()
        K = self._K.copy()
        K.data = coeffs @ self._coeff_data
        return K

    def __call__(self, rho: np.ndarray, t: float) -> np.ndarray:
        return _kernels.rhs(
            float(t), np.ascontiguousarray(rho, dtype=complex), self.detunings,
            self._coeff_data, self._indptr, self._indices,
            self._jsrc, self._jdst, self._jrate,
        )

    def sparse_rhs(self, rho: np.ndarray, t: float) -> np.ndarray:
        """Same derivative evaluated with plain scipy sparse products."""
        X = self.effective_hamiltonian(t) @ rho
        out = -1j * (X - X.conj().T)
        for rate, J in self.jumps:
            out += rate * (J @ (J @ rho).conj().T)
        return out

    def advance(self, rho: np.ndarray, t: float, h: float, n_steps: int) -> tuple[np.ndarray, float]:
        """``n_steps`` RK4 steps from local time ``t``; returns (rho, max trace drift)."""
        return _kernels.advance(
            np.ascontiguousarray(rho, dtype=complex), float(t), float(h), int(n_steps),
            self.detunings, self._coeff_data, self._indptr, self._indices,
            self._jsrc, self._jdst, self._jrate,
        )


def _shared_pattern(terms: Sequence[sp.csr_matrix], dim: int):
    """Align ``terms`` on their union sparsity pattern.

    Returns a CSR matrix holding that pattern and a ``(len(terms), nnz)``
    array so that ``coeffs @ data`` gives the data of ``sum c_i terms_i``.
    """
    union = sp.csr_matrix((dim, dim), dtype=float)
    for T in terms:
        union = union + abs(T).astype(float)
    union = union.tocoo()
    keys = union.row.astype(np.int64) * dim + union.col
    order = np.argsort(keys)
    keys = keys[order]
    rows, cols = union.row[order], union.col[order]
    data = np.zeros((len(terms), keys.size), dtype=complex)
    for i, T in enumerate(terms):
        c = T.tocoo()
        pos = np.searchsorted(keys, c.row.astype(np.int64) * dim + c.col)
        np.add.at(data[i], pos, c.data)
    K = sp.csr_matrix((np.zeros(keys.size, dtype=complex), (rows, cols)), shape=(dim, dim))
    # keys are row-major sorted, so CSR data order matches ``data`` columns
    K.has_sorted_indices = True
    if K.nnz != keys.size:
        raise AssertionError("sparsity pattern collapsed while aligning terms")
    return K, data


def _partial_permutation(J: sp.csr_matrix):
    """``(src, dst)`` if J maps basis states one-to-one with unit weight, else None."""
    c = J.tocoo()
    if (
        np.allclose(c.data, 1.0)
        and np.unique(c.row).size == c.nnz
        and np.unique(c.col).size == c.nnz
    ):
        return c.col.copy(), c.row.copy()
    return None


def lindblad_rhs(rho: np.ndarray, t: float, rnd: Round, dims: SystemDims) -> np.ndarray:
    """Right-hand side of the master equation for Hermitian ``rho``."""
    rho = np.asarray(rho)
    if rho.shape != (dims.dim, dims.dim):
        raise ValueError(f"rho has shape {rho.shape}, expected {(dims.dim, dims.dim)}")
    return LindbladGenerator(rnd, dims).sparse_rhs(rho, t)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectoryRecord:
    """Sampled observables; ``pops`` has one column per stabilizer."""

    t: list[float] = field(default_factory=list)
    fidelity: list[float] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)
    purity: list[float] = field(default_factory=list)
    n_t: list[float] = field(default_factory=list)
    n_osc: list[float] = field(default_factory=list)
    pops: list[list[float]] = field(default_factory=list)
    min_eig: list[float] = field(default_factory=list)
    herm_err: list[float] = field(default_factory=list)
    round_ends: list[int] = field(default_factory=list)
    cycle_ends: list[int] = field(default_factory=list)

    _SERIES = ("t", "fidelity", "trace", "purity", "n_t", "n_osc", "pops", "min_eig", "herm_err")

    def __len__(self) -> int:
        return len(self.t)

    def extend(self, other: "TrajectoryRecord", skip_first: bool = False) -> None:
        start = 1 if skip_first else 0
        offset = len(self.t) - start
        for name in self._SERIES:
            getattr(self, name).extend(getattr(other, name)[start:])
        self.round_ends.extend(i + offset for i in other.round_ends if i >= start)
        self.cycle_ends.extend(i + offset for i in other.cycle_ends if i >= start)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: np.asarray(getattr(self, name)) for name in self._SERIES}

    def fidelity_at_cycle_ends(self) -> np.ndarray:
        return np.asarray([self.fidelity[i] for i in self.cycle_ends])


class Observer:
    """Computes the recorded observables from a density matrix."""

    def __init__(self, dims: SystemDims, target=None, sset: StabilizerSet | None = None,
                 check_positivity: bool = True):
        self.dims = dims
        self.sset = sset
        self.check_positivity = check_positivity
        self._gidx = ground_indices(dims.n_atoms)
        self._target = None
        if target is not None:
            t = target.toarray() if sp.issparse(target) else np.asarray(target)
            if t.shape[0] == dims.atomic_dim:
                t = t[self._gidx] if t.ndim == 1 else t[np.ix_(self._gidx, self._gidx)]
            if t.ndim == 1:
                t = np.outer(t, t.conj())
            self._target = t
        self._n_t = build_n_t(dims).diagonal().real
        self._n_osc = build_n_osc(dims).diagonal().real

    def fidelity(self, rho: np.ndarray) -> float:
        if self._target is None:
            return float("nan")
        rho_a = atomic_reduced(rho, self.dims.n_atoms)
        rho_g = rho_a[np.ix_(self._gidx, self._gidx)]
        return float(np.real(np.sum(rho_g * self._target.T)))

    def record(self, rec: TrajectoryRecord, rho: np.ndarray, t: float) -> None:
        diag = np.real(np.diagonal(rho))
        rec.t.append(float(t))
        rec.fidelity.append(self.fidelity(rho))
        rec.trace.append(float(diag.sum()))
        rec.purity.append(float(np.real(np.vdot(rho, rho))))
        rec.n_t.append(float(diag @ self._n_t))
        rec.n_osc.append(float(diag @ self._n_osc))
        rec.pops.append(list(sign_populations(rho, self.sset)) if self.sset else [])
        rec.herm_err.append(float(np.max(np.abs(rho - rho.conj().T))))
        if self.check_positivity:
            rec.min_eig.append(float(np.linalg.eigvalsh(rho)[0]))
        else:
            rec.min_eig.append(float("nan"))


def max_step(generator: LindbladGenerator) -> float:
    """Default step ``(2 pi / omega_fast) / 32``."""
    return 2 * math.pi / generator.omega_fast() / POINTS_PER_PERIOD


def choose_steps(duration: float, dt_max: float, dt: float | None = None) -> tuple[int, float]:
    """Number of steps and the actual step covering ``duration`` exactly."""
    if dt is not None:
        if dt <= 0:
            raise ValueError("dt must be positive")
        if dt > dt_max * (1 + 1e-12):
            raise ValueError(f"dt={dt:g} does not resolve the fastest phase (limit {dt_max:g})")
    else:
        dt = dt_max
    if duration == 0:
        return 0, 0.0
    n = max(1, math.ceil(duration / dt - 1e-9))
    return n, duration / n


def rk4_step(f: Callable[[np.ndarray, float], np.ndarray], rho: np.ndarray, t: float, h: float) -> np.ndarray:
    k1 = f(rho, t)
    k2 = f(rho + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(rho + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(rho + h * k3, t + h)
    return rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check(rho: np.ndarray, t: float, min_eig: float | None = None) -> None:
    drift = abs(np.real(np.trace(rho)) - 1.0)
    if drift > TRACE_TOL:
        raise IntegrationError(
            f"trace drift {drift:.3e} at t={t:.6g} exceeds {TRACE_TOL:g}; step size too large?"
        )
    if min_eig is not None and min_eig < -NEGATIVITY_TOL:
        raise IntegrationError(
            f"minimum eigenvalue {min_eig:.3e} at t={t:.6g} below -{NEGATIVITY_TOL:g}; "
            "step size too large?"
        )


def integrate_round(
    rho0: np.ndarray,
    rnd: Round,
    dims: SystemDims,
    observer: Observer | None = None,
    dt: float | None = None,
    stride: int = 50,
    t0: float = 0.0,
    generator: LindbladGenerator | None = None,
) -> tuple[np.ndarray, TrajectoryRecord]:
    """Advance ``rho0`` over one round.

    Pre/post rotations are applied as instantaneous conjugations at the round
    boundaries.  Samples are taken at the start (after the pre-rotation), every
    ``stride`` steps, and at the end (after the post-rotation).  Tone phases
    use the time elapsed since the start of the round.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    observer = observer or Observer(dims)
    gen = generator or LindbladGenerator(rnd, dims)
    n_steps, h = choose_steps(rnd.duration, max_step(gen), dt)
    rho = np.array(rho0, dtype=complex, copy=True)
    if rho.shape != (dims.dim, dims.dim):
        raise ValueError(f"rho has shape {rho.shape}, expected {(dims.dim, dims.dim)}")
    if rnd.pre_rotation:
        U = rotation_operator(rnd.pre_rotation, dims)
        rho = U @ (U @ rho).conj().T
    rec = TrajectoryRecord()
    if n_steps == 0:
        if rnd.post_rotation:
            U = rotation_operator(rnd.post_rotation, dims)
            rho = U @ (U @ rho).conj().T
        observer.record(rec, rho, t0)
        rec.round_ends.append(0)
        return rho, rec
    observer.record(rec, rho, t0)
    step = 0
    while step < n_steps:
        chunk = min(stride, n_steps - step)
        rho, drift = gen.advance(rho, step * h, h, chunk)
        step += chunk
        t = t0 + step * h
        if drift > TRACE_TOL:
            raise IntegrationError(
                f"trace drift {drift:.3e} before t={t:.6g} exceeds {TRACE_TOL:g}; step size too large?"
            )
        if step == n_steps and rnd.post_rotation:
            U = rotation_operator(rnd.post_rotation, dims)
            rho = U @ (U @ rho).conj().T
        observer.record(rec, rho, t)
        _check(rho, t, rec.min_eig[-1] if observer.check_positivity else None)
    rec.round_ends.append(len(rec.t) - 1)
    return rho, rec


@dataclass
class Checkpoint:
    """State needed to resume :func:`run_schedule` at a cycle boundary."""

    rho: np.ndarray
    cycle: int
    t: float
    record: TrajectoryRecord
    meta: str = ""

    def save(self, path) -> None:
        arrays = {f"rec_{k}": v for k, v in self.record.as_arrays().items()}
        np.savez(
            path,
            version=np.array(1),
            rho=self.rho,
            cycle=np.array(self.cycle),
            t=np.array(self.t),
            round_ends=np.asarray(self.record.round_ends, dtype=np.int64),
            cycle_ends=np.asarray(self.record.cycle_ends, dtype=np.int64),
            meta=np.array(self.meta),
            **arrays,
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as z:
            if int(z["version"]) != 1:
                raise ValueError(f"unsupported checkpoint version {int(z['version'])}")
            rec = TrajectoryRecord()
            for name in TrajectoryRecord._SERIES:
                setattr(rec, name, z[f"rec_{name}"].tolist())
            rec.round_ends = z["round_ends"].tolist()
            rec.cycle_ends = z["cycle_ends"].tolist()
            meta = str(z["meta"]) if "meta" in z.files else ""
            return cls(rho=z["rho"], cycle=int(z["cycle"]), t=float(z["t"]), record=rec, meta=meta)


def run_schedule(
    rho0: np.ndarray,
    schedule: Sequence[Round],
    dims: SystemDims,
    observer: Observer | None = None,
    cycles: int = 1,
    dt: float | None = None,
    stride: int = 50,
    epsilon: float | None = None,
    min_cycles: int = 2,
    checkpoint_path=None,
    checkpoint_every: int = 1,
    resume: Checkpoint | None = None,
    checkpoint_meta: str = "",
) -> tuple[np.ndarray, TrajectoryRecord]:
    """Repeat ``schedule`` for up to ``cycles`` cycles.

    With ``epsilon`` set, stops once the fidelity at consecutive cycle ends
    changes by less than ``epsilon`` (after at least ``min_cycles`` cycles).
    """
    if not schedule:
        raise ValueError("schedule is empty")
    observer = observer or Observer(dims)
    generators = [LindbladGenerator(r, dims) for r in schedule]
    if resume is not None:
        rho, t, start, rec = np.array(resume.rho, dtype=complex), resume.t, resume.cycle, resume.record
    else:
        rho = np.array(rho0, dtype=complex, copy=True)
        t, start, rec = 0.0, 0, None
    for cycle in range(start, cycles):
        for rnd, gen in zip(schedule, generators):
            rho, seg = integrate_round(rho, rnd, dims, observer, dt=dt, stride=stride, t0=t, generator=gen)
            if rec is None:
                rec = seg
            else:
                rec.extend(seg, skip_first=True)
            t += rnd.duration
        rec.cycle_ends.append(len(rec.t) - 1)
        fids = rec.fidelity_at_cycle_ends()
        logger.info("cycle %d  t=%.6g  fidelity=%.6f", cycle + 1, t, fids[-1])
        if checkpoint_path is not None and (cycle + 1) % checkpoint_every == 0:
            Checkpoint(rho, cycle + 1, t, rec, checkpoint_meta).save(checkpoint_path)
        if epsilon is not None and cycle + 1 >= min_cycles:
            previous = fids[-2] if fids.size > 1 else rec.fidelity[0]
            if abs(fids[-1] - previous) < epsilon:
                break
    return rho, rec


def fully_mixed_initial(dims: SystemDims) -> np.ndarray:
    """Maximally mixed ground doublets ⊗ oscillator vacuum."""
    rho = np.zeros((dims.dim, dims.dim), dtype=complex)
    idx = ground_indices(dims.n_atoms) * dims.n_osc
    rho[idx, idx] = 1.0 / idx.size
    return rho


def product_initial(dims: SystemDims, levels: str, n: int = 0) -> np.ndarray:
    """Pure product state such as all-L, ``|L...L, n><L...L, n|``."""
    v = dims.basis_state(levels, n)
    return np.outer(v, v.conj())


def diagonal_initial(dims: SystemDims, weights: Sequence[float]) -> np.ndarray:
    """Diagonal state over the ``2**N`` ground configurations (qubit order) ⊗ vacuum."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (2**dims.n_atoms,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("need 2**N non-negative weights with positive sum")
    rho = np.zeros((dims.dim, dims.dim), dtype=complex)
    idx = ground_indices(dims.n_atoms) * dims.n_osc
    rho[idx, idx] = w / w.sum()
    return rho

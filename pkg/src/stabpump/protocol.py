"""Compile stabilizer sets into optical-pumping rounds.

For a stabilizer of weight k the oscillator couples, on every supported atom,
the ground state that is the -1 eigenstate of the local Pauli letter (the
"counted" level) to |E>.  ``n_s`` then counts atoms in that level or in |E>,
and its parity is the stabilizer eigenvalue.  For every odd ``m <= k``:

* an up tone at detuning ``+sqrt(m+1)`` drives the uncounted (+1) level to
  |E>, moving population from ``n_s = m`` to ``m + 1``;
* a down tone at detuning ``-sqrt(m)`` drives the counted level to |E>,
  after which decay to the uncounted level lowers ``n_s`` to ``m - 1``.

Rates follow ``Gamma = lambda (sqrt(k) - sqrt(k-1))``, ``Gamma_L = Gamma_R =
Gamma / 2``, tone Rabi amplitude ``Gamma / sqrt(k)`` and duration ``pi/Gamma``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .dynamics import Round, Tone, pump_hamiltonian, rotation_operator
from .operators import CouplingConfig, SystemDims, build_H_ah
from .stabilizer import (
    Stabilizer,
    StabilizerSet,
    basis_change,
    plus_minus_eigenstates,
    validate_set,
)

COUPLED_MINUS = "minus"
COUPLED_PLUS = "plus"  # the literal +1-eigenstate coupling prescription


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolParams:
    lam: float = 0.05
    up_sign: int = 1
    down_sign: int = -1
    tone_cap: int | None = None
    coupled: str = COUPLED_MINUS

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ProtocolError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.up_sign not in (1, -1) or self.down_sign not in (1, -1):
            raise ProtocolError("detuning signs must be +1 or -1")
        if self.tone_cap is not None and self.tone_cap < 1:
            raise ProtocolError("tone_cap must be >= 1")
        if self.coupled not in (COUPLED_MINUS, COUPLED_PLUS):
            raise ProtocolError(f"unknown coupling convention {self.coupled!r}")


@dataclass(frozen=True)
class ToneInfo:
    tone: Tone
    kind: str  # "up" or "down"
    from_ns: int
    to_ns: int


@dataclass(frozen=True)
class CompiledRound:
    round: Round
    index: int
    stabilizer: Stabilizer
    weight: int
    gamma: float
    tone_info: tuple[ToneInfo, ...] = field(default=())

    @property
    def duration(self) -> float:
        return self.round.duration

    def detunings(self) -> list[float]:
        return sorted({ti.tone.detuning for ti in self.tone_info})

    def to_dict(self) -> dict:
        c = self.round.couplings
        return {
            "mu": self.index + 1,
            "word": self.stabilizer.text,
            "k": self.weight,
            "gamma": self.gamma,
            "gamma_L": self.round.gamma_L,
            "gamma_R": self.round.gamma_R,
            "duration": self.round.duration,
            "couplings": [
                {"atom": j, "g_L": _cplx(c.g_L[j]), "g_R": _cplx(c.g_R[j])}
                for j in range(c.n_atoms)
            ],
            "tones": [
                {
                    "atom": ti.tone.atom,
                    "transition": ti.tone.transition,
                    "rabi": _cplx(ti.tone.rabi),
                    "detuning": ti.tone.detuning,
                    "kind": ti.kind,
                    "from_ns": ti.from_ns,
                    "to_ns": ti.to_ns,
                }
                for ti in self.tone_info
            ],
            "pre_rotation": _rot_dict(self.round.pre_rotation),
            "post_rotation": _rot_dict(self.round.post_rotation),
        }


def _cplx(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def _rot_dict(rot):
    if not rot:
        return None
    return {str(j): [[_cplx(x) for x in row] for row in np.asarray(u)] for j, u in rot.items()}


def round_gamma(weight: int, lam: float) -> float:
    """``lambda (sqrt(k) - sqrt(k - 1))``, the resolved gap scaled by lambda."""
    if weight < 1:
        raise ProtocolError("weight must be >= 1")
    return lam * (math.sqrt(weight) - math.sqrt(weight - 1))


def _levels(letter: str, coupled: str) -> tuple[np.ndarray, np.ndarray]:
    """(coupled, uncoupled) doublet vectors for one atom."""
    plus, minus = plus_minus_eigenstates(letter)
    if coupled == COUPLED_MINUS:
        return minus.vector(), plus.vector()
    a, b = plus.alpha, plus.beta
    # literal rule: couple alpha|L>+beta|R>; the replaced L-field drives
    # (beta, -alpha) in bra amplitudes, i.e. ket conj(beta)|L> - conj(alpha)|R>
    return plus.vector(), np.array([np.conj(b), -np.conj(a)])


def compile_round(stab: Stabilizer, params: ProtocolParams, index: int = 0) -> CompiledRound:
    k = stab.weight
    if k < 1:
        raise ProtocolError(f"cannot pump the identity word {stab.text!r}")
    n = stab.n_atoms
    gamma = round_gamma(k, params.lam)
    rabi = gamma / math.sqrt(k)
    cap = k if params.tone_cap is None else min(params.tone_cap, k)

    g_L = [0j] * n
    g_R = [0j] * n
    drives = {}
    for j in stab.support:
        coupled, uncoupled = _levels(stab.letters[j], params.coupled)
        # |E><c| = sum_x conj(<x|c>) |E><x|
        g_L[j], g_R[j] = complex(np.conj(coupled[0])), complex(np.conj(coupled[1]))
        drives[j] = (coupled, uncoupled)

    infos: list[ToneInfo] = []
    for m in range(1, cap + 1, 2):
        if m + 1 <= cap:
            det = params.up_sign * math.sqrt(m + 1)
            infos.extend(_drive(drives, "up", det, rabi, m, m + 1))
        det = params.down_sign * math.sqrt(m)
        infos.extend(_drive(drives, "down", det, rabi, m, m - 1))

    rnd = Round(
        couplings=CouplingConfig(tuple(g_L), tuple(g_R)),
        tones=tuple(ti.tone for ti in infos),
        gamma_L=gamma / 2,
        gamma_R=gamma / 2,
        duration=math.pi / gamma,
    )
    return CompiledRound(rnd, index, stab, k, gamma, tuple(infos))


def _drive(drives, kind, detuning, rabi, from_ns, to_ns) -> list[ToneInfo]:
    out = []
    for j, (coupled, uncoupled) in sorted(drives.items()):
        vec = uncoupled if kind == "up" else coupled
        for x, amp in zip(("L", "R"), vec):
            if abs(amp) > 1e-15:
                tone = Tone(j, x, complex(np.conj(amp)) * rabi, detuning)
                out.append(ToneInfo(tone, kind, from_ns, to_ns))
    return out


def all_z_word(stab: Stabilizer) -> Stabilizer:
    """Z on the support of ``stab``, identity elsewhere."""
    return Stabilizer(tuple("Z" if ch != "I" else "I" for ch in stab.letters))


def compile_round_rotated_variant(stab: Stabilizer, params: ProtocolParams, index: int = 0) -> CompiledRound:
    """All-Z round (only |R> <-> |E> coupled) framed by single-atom rotations.

    The pre-rotation maps each supported letter's eigenbasis onto the Z
    eigenbasis; the post-rotation undoes it.
    """
    if stab.weight < 1:
        raise ProtocolError(f"cannot pump the identity word {stab.text!r}")
    base = compile_round(all_z_word(stab), params, index)
    pre, post = {}, {}
    for j in stab.support:
        if stab.letters[j] != "Z":
            V = basis_change(stab.letters[j])
            pre[j] = V.conj().T
            post[j] = V
    rnd = Round(
        couplings=base.round.couplings,
        tones=base.round.tones,
        gamma_L=base.round.gamma_L,
        gamma_R=base.round.gamma_R,
        duration=base.round.duration,
        pre_rotation=pre or None,
        post_rotation=post or None,
    )
    return CompiledRound(rnd, index, stab, base.weight, base.gamma, base.tone_info)


def compile_schedule(sset: StabilizerSet, params: ProtocolParams, variant: str = "standard") -> list[CompiledRound]:
    """One cycle of rounds in member order."""
    if len(sset) == 0:
        raise ProtocolError("stabilizer set is empty")
    report = validate_set(sset)
    if not report.ok:
        raise ProtocolError("; ".join(report.messages))
    if variant == "standard":
        fn = compile_round
    elif variant == "rotated":
        fn = compile_round_rotated_variant
    else:
        raise ProtocolError(f"unknown variant {variant!r}")
    return [fn(stab, params, mu) for mu, stab in enumerate(sset)]


def schedule_json(schedule: Sequence[CompiledRound], params: ProtocolParams) -> str:
    return json.dumps(
        {
            "lambda": params.lam,
            "coupled": params.coupled,
            "cycle_duration": sum(cr.duration for cr in schedule),
            "rounds": [cr.to_dict() for cr in schedule],
        },
        indent=2,
    )


def compiled_hamiltonian(cr: CompiledRound, dims: SystemDims, t: float = 0.0) -> sp.csr_matrix:
    """``H_ah + H_p(t)`` of a compiled round."""
    return build_H_ah(cr.round.couplings, dims) + pump_hamiltonian(cr.round.tones, t, dims)


def eigenbasis_rotation(stab: Stabilizer, dims: SystemDims) -> sp.csr_matrix:
    """``V = ⊗_j (|+_j><L| + |-_j><R| + |E><E|)`` over the support."""
    return rotation_operator({j: basis_change(stab.letters[j]) for j in stab.support}, dims)

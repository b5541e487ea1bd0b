import json
import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from stabpump.dynamics import LindbladGenerator, Observer, fully_mixed_initial, run_schedule
from stabpump.operators import SystemDims, build_n_s
from stabpump.protocol import (
    ProtocolError,
    ProtocolParams,
    all_z_word,
    compile_round,
    compile_round_rotated_variant,
    compile_schedule,
    compiled_hamiltonian,
    eigenbasis_rotation,
    round_gamma,
    schedule_json,
)
from stabpump.stabilizer import (
    embed_qubit_operator,
    ground_indices,
    linear_cluster_set,
    make_set,
    parse_stabilizer,
    target_projector,
)

SQ2 = math.sqrt(2)


def test_round_gamma():
    assert round_gamma(1, 0.05) == pytest.approx(0.05)
    assert round_gamma(2, 0.05) == pytest.approx(0.05 * (SQ2 - 1))
    assert round_gamma(3, 0.02) == pytest.approx(0.02 * (math.sqrt(3) - SQ2))
    with pytest.raises(ProtocolError):
        round_gamma(0, 0.05)


def test_weight_two_round():
    cr = compile_round(parse_stabilizer("ZZ"), ProtocolParams(0.05))
    gamma = 0.05 * (SQ2 - 1)
    assert cr.gamma == pytest.approx(gamma)
    assert cr.round.gamma_L == cr.round.gamma_R == pytest.approx(gamma / 2)
    assert cr.duration == pytest.approx(math.pi / gamma)
    assert cr.detunings() == pytest.approx([-1.0, SQ2])
    for ti in cr.tone_info:
        assert abs(ti.tone.rabi) == pytest.approx(gamma / SQ2)
        # up tones start from the uncoupled level L, down tones from the coupled level R
        assert ti.tone.transition == ("L" if ti.kind == "up" else "R")
    assert {(ti.kind, ti.from_ns, ti.to_ns) for ti in cr.tone_info} == {("up", 1, 2), ("down", 1, 0)}


def test_weight_three_tones_truncate_at_k():
    cr = compile_round(parse_stabilizer("ZXZ"), ProtocolParams(0.05))
    kinds = {(ti.kind, ti.from_ns, ti.to_ns, ti.tone.detuning) for ti in cr.tone_info}
    assert kinds == {
        ("up", 1, 2, SQ2),
        ("down", 1, 0, -1.0),
        ("down", 3, 2, -math.sqrt(3)),
    }


def test_xz_couplings():
    cr = compile_round(parse_stabilizer("XZ"), ProtocolParams(0.05))
    c = cr.round.couplings
    assert c.g_L[0] == pytest.approx(1 / SQ2)
    assert c.g_R[0] == pytest.approx(-1 / SQ2)
    assert c.g_L[1] == 0 and c.g_R[1] == 1


def test_plus_convention_couples_other_level():
    cr = compile_round(parse_stabilizer("ZZ"), ProtocolParams(0.05, coupled="plus"))
    c = cr.round.couplings
    assert c.g_L == (1, 1) and c.g_R == (0, 0)


def test_cluster_schedule():
    sched = compile_schedule(linear_cluster_set(4), ProtocolParams(0.05))
    assert [cr.weight for cr in sched] == [2, 3, 3, 2]
    assert [cr.index for cr in sched] == [0, 1, 2, 3]
    data = json.loads(schedule_json(sched, ProtocolParams(0.05)))
    assert data["cycle_duration"] == pytest.approx(sum(cr.duration for cr in sched))
    assert data["rounds"][1]["word"] == "ZXZI"


def test_compile_errors():
    with pytest.raises(ProtocolError, match="anticommute"):
        compile_schedule(make_set(["XI", "ZI"]), ProtocolParams())
    with pytest.raises(ProtocolError):
        compile_round(parse_stabilizer("II"), ProtocolParams())
    with pytest.raises(ProtocolError):
        compile_schedule(make_set(["ZZ"]), ProtocolParams(), variant="diagonal")
    with pytest.raises(ProtocolError):
        ProtocolParams(lam=1.5)
    with pytest.raises(ProtocolError):
        ProtocolParams(coupled="both")


# -- unitary equivalence -----------------------------------------------------

words = st.integers(1, 3).flatmap(
    lambda n: st.lists(st.sampled_from("IXYZ"), min_size=n, max_size=n)
).map("".join).filter(lambda w: set(w) != {"I"})


@settings(max_examples=30, deadline=None)
@given(word=words, t=st.floats(0, 200))
def test_hamiltonian_unitarily_equivalent_to_all_z(word, t):
    stab = parse_stabilizer(word)
    dims = SystemDims(stab.n_atoms, 2)
    params = ProtocolParams(0.05)
    cr = compile_round(stab, params)
    cz = compile_round(all_z_word(stab), params)
    V = eigenbasis_rotation(stab, dims)
    Hs = compiled_hamiltonian(cr, dims, t)
    Hz = compiled_hamiltonian(cz, dims, t)
    diff = (V @ Hz @ V.getH() - Hs).toarray()
    assert np.linalg.norm(diff, 2) <= 1e-12
    assert cr.round.duration == cz.round.duration
    assert cr.gamma == cz.gamma


@settings(max_examples=15, deadline=None)
@given(word=words)
def test_n_s_parity_is_the_stabilizer(word):
    stab = parse_stabilizer(word)
    dims = SystemDims(stab.n_atoms, 1)
    ns = build_n_s(stab, dims).toarray()
    assert np.allclose(ns, ns.conj().T)
    ev = np.linalg.eigvalsh(ns)
    np.testing.assert_allclose(ev, np.round(ev), atol=1e-12)
    parity = sla.expm(1j * np.pi * ns)
    g = ground_indices(stab.n_atoms) * dims.n_osc
    block = parity[np.ix_(g, g)]
    np.testing.assert_allclose(block, stab.qubit_matrix().toarray(), atol=1e-12)


def test_dissipator_invariant_under_doublet_rotation():
    stab = parse_stabilizer("XY")
    dims = SystemDims(2, 1)
    gen = LindbladGenerator(compile_round(stab, ProtocolParams(0.05)).round, dims)
    V = eigenbasis_rotation(stab, dims).toarray()
    rng = np.random.default_rng(0)
    a = rng.normal(size=(dims.dim, dims.dim)) + 1j * rng.normal(size=(dims.dim, dims.dim))
    rho = a @ a.conj().T
    rho /= np.trace(rho)

    def dissipator(r):
        out = np.zeros_like(r)
        for rate, J in gen.jumps:
            J = J.toarray()
            JdJ = J.conj().T @ J
            out += rate * (J @ r @ J.conj().T - 0.5 * (JdJ @ r + r @ JdJ))
        return out

    np.testing.assert_allclose(dissipator(V @ rho @ V.conj().T), V @ dissipator(rho) @ V.conj().T, atol=1e-15)


def test_rotated_variant_structure():
    cr = compile_round_rotated_variant(parse_stabilizer("ZXZ"), ProtocolParams(0.05))
    assert cr.round.couplings.g_L == (0, 0, 0)
    assert set(cr.round.pre_rotation) == {1}
    V = cr.round.post_rotation[1]
    np.testing.assert_allclose(cr.round.pre_rotation[1], V.conj().T)
    assert compile_round_rotated_variant(parse_stabilizer("ZZ"), ProtocolParams()).round.pre_rotation is None


def test_rotated_variant_matches_standard_over_cycles():
    sset = linear_cluster_set(2)
    dims = SystemDims(2, 1)
    obs = Observer(dims, target_projector(sset), sset)
    out = {}
    for variant in ("standard", "rotated"):
        sched = [cr.round for cr in compile_schedule(sset, ProtocolParams(0.05), variant)]
        _, rec = run_schedule(fully_mixed_initial(dims), sched, dims, obs, cycles=2, stride=10**6)
        out[variant] = np.asarray(rec.fidelity)[rec.round_ends]
    np.testing.assert_allclose(out["rotated"], out["standard"], atol=1e-10)


def test_cluster_target_in_qubit_space():
    sset = linear_cluster_set(2)
    P = target_projector(sset)
    S = [embed_qubit_operator(s.qubit_matrix(), 2) for s in sset]
    for Sm in S:
        assert abs(Sm @ P - P).max() <= 1e-14

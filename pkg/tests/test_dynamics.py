import numpy as np
import pytest
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from stabpump.dynamics import (
    Checkpoint,
    IntegrationError,
    LindbladGenerator,
    Observer,
    Round,
    Tone,
    _check,
    choose_steps,
    diagonal_initial,
    fully_mixed_initial,
    integrate_round,
    lindblad_rhs,
    max_step,
    product_initial,
    pump_hamiltonian,
    rotation_operator,
    run_schedule,
)
from stabpump.operators import CouplingConfig, SystemDims, atomic_transition, build_H_ah
from stabpump.protocol import ProtocolParams, compile_schedule
from stabpump.stabilizer import linear_cluster_set, make_set, target_projector


def random_density(dim, rng, rank=None):
    a = rng.normal(size=(dim, rank or dim)) + 1j * rng.normal(size=(dim, rank or dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def dense_rhs(rho, t, rnd, dims):
    """Direct master-equation formula with dense matrices."""
    H = build_H_ah(rnd.couplings, dims).toarray() + pump_hamiltonian(rnd.tones, t, dims).toarray()
    out = -1j * (H @ rho - rho @ H)
    for j in range(dims.n_atoms):
        for x, rate in (("L", rnd.gamma_L), ("R", rnd.gamma_R)):
            J = atomic_transition(j, "E", x, dims).toarray()
            JdJ = J.conj().T @ J
            out += rate * (J @ rho @ J.conj().T - 0.5 * (JdJ @ rho + rho @ JdJ))
    return out


def liouvillian(rnd, dims):
    """Column-stacked superoperator of a time-independent round."""
    H = build_H_ah(rnd.couplings, dims).toarray() + pump_hamiltonian(rnd.tones, 0.0, dims).toarray()
    eye = np.eye(dims.dim)
    L = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for j in range(dims.n_atoms):
        for x, rate in (("L", rnd.gamma_L), ("R", rnd.gamma_R)):
            J = atomic_transition(j, "E", x, dims).toarray()
            JdJ = J.conj().T @ J
            L += rate * (np.kron(J.conj(), J) - 0.5 * (np.kron(eye, JdJ) + np.kron(JdJ.T, eye)))
    return L


def vec(rho):
    return rho.reshape(-1, order="F")


def unvec(v, dim):
    return v.reshape(dim, dim, order="F")


@pytest.fixture
def driven_round():
    return Round(
        couplings=CouplingConfig((0.3, 1 / np.sqrt(2)), (1.0, -1 / np.sqrt(2))),
        tones=(Tone(0, "L", 0.02, 1.0), Tone(1, "R", 0.03 - 0.01j, -np.sqrt(2)), Tone(0, "R", 0.015, 1.0)),
        gamma_L=0.01,
        gamma_R=0.02,
        duration=5.0,
    )


# -- right-hand side ---------------------------------------------------------

@pytest.mark.parametrize("t", [0.0, 0.7, 13.3])
def test_rhs_matches_dense_formula(driven_round, t):
    dims = SystemDims(2, 2)
    rho = random_density(dims.dim, np.random.default_rng(1))
    expect = dense_rhs(rho, t, driven_round, dims)
    gen = LindbladGenerator(driven_round, dims)
    np.testing.assert_allclose(gen.sparse_rhs(rho, t), expect, atol=1e-14)
    np.testing.assert_allclose(gen(rho, t), expect, atol=1e-14)
    np.testing.assert_allclose(lindblad_rhs(rho, t, driven_round, dims), expect, atol=1e-14)


def test_rhs_is_traceless_and_hermitian(driven_round):
    dims = SystemDims(2, 1)
    gen = LindbladGenerator(driven_round, dims)
    rho = random_density(dims.dim, np.random.default_rng(2))
    d = gen(rho, 0.3)
    assert abs(np.trace(d)) < 1e-15
    assert np.max(np.abs(d - d.conj().T)) < 1e-15


def test_effective_hamiltonian_has_shared_pattern(driven_round):
    dims = SystemDims(2, 1)
    gen = LindbladGenerator(driven_round, dims)
    K1, K2 = gen.effective_hamiltonian(0.0), gen.effective_hamiltonian(1.1)
    assert K1.nnz == K2.nnz
    np.testing.assert_array_equal(K1.indices, K2.indices)


def test_rhs_rejects_wrong_shape(driven_round):
    with pytest.raises(ValueError):
        lindblad_rhs(np.eye(3), 0.0, driven_round, SystemDims(2, 1))


# -- integration against independent references ------------------------------

def test_integration_matches_reference_ode(driven_round):
    dims = SystemDims(2, 1)
    rho0 = random_density(dims.dim, np.random.default_rng(4))
    h = max_step(LindbladGenerator(driven_round, dims)) / 16
    rho, _ = integrate_round(rho0, driven_round, dims, dt=h)

    def f(t, y):
        return vec(dense_rhs(unvec(y, dims.dim), t, driven_round, dims))

    sol = solve_ivp(f, (0, driven_round.duration), vec(rho0), method="DOP853", rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(rho, unvec(sol.y[:, -1], dims.dim), atol=1e-9)


def _single_atom_round(rabi=0.05, gamma=0.1, duration=400.0):
    # resonant L <-> E drive, symmetric decay, oscillator uncoupled
    return Round(CouplingConfig((0,), (0,)), (Tone(0, "L", rabi, 0.0),), gamma / 2, gamma / 2, duration)


def test_single_atom_matches_matrix_exponential():
    dims = SystemDims(1, 1)
    rnd = _single_atom_round(duration=60.0)
    rho0 = product_initial(dims, "L")
    rho, _ = integrate_round(rho0, rnd, dims)
    exact = unvec(sla.expm(liouvillian(rnd, dims) * rnd.duration) @ vec(rho0), dims.dim)
    np.testing.assert_allclose(rho, exact, atol=1e-10)


def test_single_atom_pumps_into_undriven_level():
    dims = SystemDims(1, 1)
    rnd = _single_atom_round()
    # every stationary state lives on the undriven level (any oscillator state)
    null = sla.null_space(liouvillian(rnd, dims))
    assert null.shape[1] >= 1
    r_idx = [dims.index("R", n) for n in range(dims.n_osc)]
    for col in null.T:
        cand = unvec(col, dims.dim)
        outside = cand.copy()
        outside[np.ix_(r_idx, r_idx)] = 0
        assert np.abs(outside).max() < 1e-10
    ss = product_initial(dims, "R")
    assert np.abs(unvec(liouvillian(rnd, dims) @ vec(ss), dims.dim)).max() < 1e-15
    rho, _ = integrate_round(product_initial(dims, "L"), rnd, dims)
    pop_R = rho[dims.index("R", 0), dims.index("R", 0)].real
    assert pop_R >= 0.999
    assert np.abs(rho - ss).max() <= 1e-3


# -- step control ------------------------------------------------------------

def test_step_bound_resolves_fast_scales(driven_round):
    dims = SystemDims(2, 2)
    gen = LindbladGenerator(driven_round, dims)
    radius = np.max(np.abs(np.linalg.eigvalsh(gen.H_ah.toarray())))
    assert gen.omega_fast() == pytest.approx(max(1.0, 2 * radius, np.sqrt(2)))
    assert max_step(gen) == pytest.approx(2 * np.pi / gen.omega_fast() / 32)


def test_choose_steps():
    assert choose_steps(10.0, 0.3) == (34, 10.0 / 34)
    assert choose_steps(0.0, 0.3) == (0, 0.0)
    n, h = choose_steps(1.0, 0.3, dt=0.25)
    assert (n, h) == (4, 0.25)
    with pytest.raises(ValueError, match="does not resolve"):
        choose_steps(1.0, 0.3, dt=0.5)
    with pytest.raises(ValueError):
        choose_steps(1.0, 0.3, dt=-1.0)


def test_guards_raise():
    rho = np.diag([0.5, 0.5 + 2e-6]).astype(complex)
    with pytest.raises(IntegrationError, match="trace drift"):
        _check(rho, 1.0)
    with pytest.raises(IntegrationError, match="minimum eigenvalue"):
        _check(np.diag([1.0, 0.0]).astype(complex), 1.0, min_eig=-2e-6)
    _check(np.diag([1.0, 0.0]).astype(complex), 1.0, min_eig=-5e-7)


def test_zero_duration_round_records_one_sample():
    dims = SystemDims(1, 1)
    rnd = Round(CouplingConfig((0,), (1,)), (), 0.1, 0.1, 0.0)
    rho0 = product_initial(dims, "R")
    rho, rec = integrate_round(rho0, rnd, dims)
    np.testing.assert_array_equal(rho, rho0)
    assert len(rec) == 1 and rec.round_ends == [0]


def test_rotation_operator():
    dims = SystemDims(2, 1)
    H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    U = rotation_operator({1: H}, dims).toarray()
    np.testing.assert_allclose(U.conj().T @ U, np.eye(dims.dim), atol=1e-15)
    with pytest.raises(ValueError):
        rotation_operator({0: np.ones((2, 2))}, dims)


# -- schedules ---------------------------------------------------------------

def _zz_schedule(lam=0.05):
    sset = make_set(["ZZ"])
    return sset, [cr.round for cr in compile_schedule(sset, ProtocolParams(lam))]


def test_records_and_integrity_on_short_run():
    sset, sched = _zz_schedule()
    dims = SystemDims(2, 1)
    obs = Observer(dims, target_projector(sset), sset)
    rho, rec = run_schedule(fully_mixed_initial(dims), sched, dims, obs, cycles=3, stride=500)
    assert rec.cycle_ends == rec.round_ends
    assert len(rec.cycle_ends) == 3
    assert rec.fidelity[0] == pytest.approx(0.5, abs=1e-14)
    assert max(abs(np.asarray(rec.trace) - 1)) <= 1e-6
    assert max(rec.herm_err) <= 1e-10
    assert min(rec.min_eig) >= -1e-6
    assert np.all(np.diff(rec.t) > 0)
    np.testing.assert_allclose(rec.fidelity, np.asarray(rec.pops)[:, 0], atol=1e-12)


def test_stop_rule_and_min_cycles():
    sset, sched = _zz_schedule()
    dims = SystemDims(2, 1)
    _, rec = run_schedule(fully_mixed_initial(dims), sched, dims, Observer(dims, target_projector(sset)),
                          cycles=50, epsilon=10.0, min_cycles=3, stride=10**6)
    assert len(rec.cycle_ends) == 3


def test_checkpoint_resume_is_exact(tmp_path):
    sset, sched = _zz_schedule()
    dims = SystemDims(2, 1)
    obs = Observer(dims, target_projector(sset), sset)
    rho0 = fully_mixed_initial(dims)
    full_rho, full_rec = run_schedule(rho0, sched, dims, obs, cycles=4, stride=700)
    path = tmp_path / "run.ckpt.npz"
    run_schedule(rho0, sched, dims, obs, cycles=2, stride=700, checkpoint_path=path)
    ck = Checkpoint.load(path)
    assert ck.cycle == 2
    rho, rec = run_schedule(None, sched, dims, obs, cycles=4, stride=700, resume=ck)
    np.testing.assert_array_equal(rho, full_rho)
    assert rec.fidelity == full_rec.fidelity
    assert rec.cycle_ends == full_rec.cycle_ends


def test_schedule_must_not_be_empty():
    with pytest.raises(ValueError):
        run_schedule(fully_mixed_initial(SystemDims(1, 1)), [], SystemDims(1, 1))


def test_initial_states():
    dims = SystemDims(3, 2)
    for rho in (fully_mixed_initial(dims), product_initial(dims, "LLL"), diagonal_initial(dims, np.arange(1, 9))):
        assert np.trace(rho).real == pytest.approx(1.0)
    obs = Observer(dims, target_projector(linear_cluster_set(3)))
    assert obs.fidelity(fully_mixed_initial(dims)) == pytest.approx(0.125, abs=1e-14)
    assert obs.fidelity(product_initial(dims, "LLL")) == pytest.approx(0.125, abs=1e-14)
    with pytest.raises(ValueError):
        diagonal_initial(dims, [1, 2])


# -- small worked examples ---------------------------------------------------

def test_zero_generator_gives_zero_derivative_and_no_motion():
    dims = SystemDims(2, 1)
    rnd = Round(CouplingConfig((0, 0), (0, 0)), (), 0.0, 0.0, 3.0)
    rho0 = random_density(dims.dim, np.random.default_rng(5))
    assert np.abs(lindblad_rhs(rho0, 0.0, rnd, dims)).max() == 0
    rho, _ = integrate_round(rho0, rnd, dims)
    np.testing.assert_array_equal(rho, (rho0 + rho0.conj().T) / 2)


def test_excited_state_decay_rates():
    dims = SystemDims(1, 1)
    gamma = 0.3
    rnd = Round(CouplingConfig((0,), (0,)), (), gamma / 2, gamma / 2, 1.0)
    d = np.real(np.diagonal(lindblad_rhs(product_initial(dims, "E"), 0.0, rnd, dims)))
    assert d[dims.index("E", 0)] == pytest.approx(-gamma)
    assert d[dims.index("L", 0)] == pytest.approx(gamma / 2)
    assert d[dims.index("R", 0)] == pytest.approx(gamma / 2)


def test_tone_periodicity():
    dims = SystemDims(2, 1)
    tones = (Tone(1, "L", 0.3 + 0.1j, np.sqrt(3)),)
    H0 = pump_hamiltonian(tones, 0.4, dims)
    H1 = pump_hamiltonian(tones, 0.4 + 2 * np.pi / np.sqrt(3), dims)
    assert abs(H0 - H1).max() <= 1e-15
    assert pump_hamiltonian((), 0.0, dims).nnz == 0
    single = pump_hamiltonian((Tone(0, "L", 0.2j, 1.0),), 0.0, dims).toarray()
    up = atomic_transition(0, "L", "E", dims).toarray()
    np.testing.assert_allclose(single, 0.2j * up - 0.2j * up.T, atol=1e-16)


def test_excitation_number_conserved_without_drive_or_decay():
    dims = SystemDims(2, 2)
    rnd = Round(CouplingConfig((0, 0), (1, 1)), (), 0.0, 0.0, 50.0)
    v = dims.basis_state("RR", 1) + dims.basis_state("ER", 0)
    v /= np.linalg.norm(v)
    # a pure state under purely coherent evolution sits on the positivity
    # boundary; RK4 pushes its zero eigenvalues negative as h**4, so use h/4
    h = max_step(LindbladGenerator(rnd, dims)) / 4
    _, rec = integrate_round(np.outer(v, v.conj()), rnd, dims, dt=h, stride=80)
    drift = np.max(np.abs(np.asarray(rec.n_t) - rec.n_t[0]))
    assert drift <= 1e-8 * rnd.duration
    assert np.ptp(rec.n_osc) > 0.1  # the exchange coupling is active


def test_stop_rule_post_condition():
    sset, sched = _zz_schedule()
    dims = SystemDims(2, 1)
    obs = Observer(dims, target_projector(sset))
    eps = 1e-3
    _, rec = run_schedule(fully_mixed_initial(dims), sched, dims, obs, cycles=100, epsilon=eps, stride=10**6)
    n = len(rec.cycle_ends)
    assert n < 100
    _, more = run_schedule(fully_mixed_initial(dims), sched, dims, obs, cycles=n + 1, stride=10**6)
    f = more.fidelity_at_cycle_ends()
    assert abs(f[-1] - f[-2]) < 2 * eps


def test_fully_mixed_purity():
    for n in (1, 2, 3):
        rho = fully_mixed_initial(SystemDims(n, 1))
        assert np.real(np.vdot(rho, rho)) == pytest.approx(2.0**-n)
    np.testing.assert_allclose(np.diagonal(fully_mixed_initial(SystemDims(1, 0))).real, [0.5, 0.5, 0])

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from qcselect.errors import StepFailureError, TruncationError
from qcselect.operators import (
    DensityMatrix,
    FockOperators,
    build_duffing_hamiltonian,
    build_lindblads,
    displacement,
    thermal_state,
)
from qcselect.params import DuffingParams
from qcselect.quantum import (
    QuantumFilter,
    QuantumFilterState,
    condition_step,
    expectation,
    hamiltonian_propagator,
    recenter_basis,
    rouchon_step,
    simulate_quantum_trace,
)
from qcselect.selector import gaussian_loglik

DT = 2 * math.pi / 1000


def liouvillian(h, ls):
    """Row-major superoperator of -i[H, .] + sum D[L]."""
    d = h.shape[0]
    eye = np.eye(d)
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for l in ls:
        ll = l.conj().T @ l
        sup += np.kron(l, l.conj()) - 0.5 * np.kron(ll, eye) - 0.5 * np.kron(eye, ll.T)
    return sup


def steady_state(h, ls):
    d = h.shape[0]
    vec = scipy.linalg.null_space(liouvillian(h, ls), rcond=1e-10)[:, 0]
    rho = vec.reshape(d, d)
    rho /= np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def test_propagator_matches_expm(ref_params):
    h = build_duffing_hamiltonian(20, ref_params)
    np.testing.assert_allclose(hamiltonian_propagator(h, 0.01),
                               scipy.linalg.expm(-0.01j * h), atol=1e-12)


def test_expectation_shape_check():
    with pytest.raises(ValueError):
        expectation(np.eye(3), np.eye(4))


def test_rouchon_step_preconditions(ref_params):
    dim = 8
    st0 = QuantumFilterState(thermal_state(dim, 0.1))
    h = build_duffing_hamiltonian(dim, ref_params)
    ls, etas = build_lindblads(dim, ref_params)
    with pytest.raises(ValueError):
        rouchon_step(st0, h, ls, etas, 0.0, 0.0)
    with pytest.raises(ValueError):
        rouchon_step(st0, h, ls, etas, math.nan, DT)
    with pytest.raises(ValueError):
        rouchon_step(st0, h, ls, (0.5, 0.5, 0.0), 0.0, DT)


@given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=30), st.floats(0.0, 1.0))
def test_rouchon_preserves_state_invariants(dys, eta):
    params = DuffingParams(eta=eta, k_meas=0.2, temperature=0.5)
    dim = 12
    state = QuantumFilterState(thermal_state(dim, params.n_thermal))
    h = build_duffing_hamiltonian(dim, params)
    ls, etas = build_lindblads(dim, params)
    for dy in dys:
        state = rouchon_step(state, h, ls, etas, dy, 0.05)
    state.rho.validate(trace_tol=1e-12, herm_tol=1e-12, eig_floor=-1e-10)
    assert state.step_index == len(dys)


def test_unsplit_step_also_normalised(ref_params):
    dim = 10
    state = QuantumFilterState(thermal_state(dim, 0.2))
    h = build_duffing_hamiltonian(dim, ref_params)
    ls, etas = build_lindblads(dim, ref_params)
    for dy in (0.05, -0.02, 0.0):
        state = rouchon_step(state, h, ls, etas, dy, 1e-3, split=False)
    state.rho.validate()


def test_recenter_moves_frame_and_preserves_physics():
    dim = 40
    ops = FockOperators.build(dim)
    d = displacement(dim, (0.9 - 0.6j) / math.sqrt(2))
    rho = d @ thermal_state(dim, 0.1).entries @ d.conj().T
    state = QuantumFilterState(DensityMatrix(rho))
    phys_q = expectation(rho, ops.q)
    new = recenter_basis(state, delta_shift=0.5)
    assert new.rho.center_q == pytest.approx(0.9, abs=1e-8)
    assert new.rho.center_p == pytest.approx(-0.6, abs=1e-8)
    assert abs(expectation(new.rho, ops.q)) < 1e-8
    assert expectation(new.rho, ops.q) + new.rho.center_q == pytest.approx(phys_q, abs=1e-8)
    np.testing.assert_allclose(np.diag(new.rho.entries).real[:5],
                               np.diag(thermal_state(dim, 0.1).entries).real[:5], atol=1e-8)


def test_recenter_renormalises_edge_loss():
    dim = 30
    ops = FockOperators.build(dim)
    pops = np.zeros(dim)
    pops[:3] = [0.6, 0.3, 0.0999]
    pops[-1] = 1e-4
    state = QuantumFilterState(DensityMatrix(np.diag(pops).astype(complex), center_q=0.5))
    rho = state.rho.entries
    rho[0, 1] = rho[1, 0] = 0.4  # frame mean of q about 0.57
    new = recenter_basis(state, delta_shift=0.5)
    assert new.rho.trace() == pytest.approx(1.0, abs=1e-14)
    assert new.rho.hermiticity_residue() == 0.0
    assert new.rho.min_eigenvalue() > -1e-12
    assert abs(expectation(new.rho, ops.q)) < 1e-2


def test_recenter_reports_basis_overflow():
    dim = 12
    pops = np.zeros(dim, complex)
    pops[-4:] = 0.25
    rho = np.diag(pops)
    rho[-2, -1] = rho[-1, -2] = 0.2
    state = QuantumFilterState(DensityMatrix(rho))
    with pytest.raises(TruncationError):
        recenter_basis(state, delta_shift=0.1)


def test_recenter_below_threshold_is_noop():
    state = QuantumFilterState(thermal_state(10, 0.1))
    assert recenter_basis(state) is state


def _dense_run(params, dys, dim):
    state = QuantumFilterState(thermal_state(dim, params.n_thermal))
    out = []
    for dy in dys:
        state = condition_step(state, dy, DT, params)
        out.append(state.last_increment)
    return state, np.array(out)


def test_fast_filter_matches_dense_reference(ref_params):
    dim = 30
    trace = simulate_quantum_trace(ref_params, 1500, DT, seed=4, dim=dim)
    state, dense_incs = _dense_run(ref_params, trace.increments, dim)
    filt = QuantumFilter(ref_params, DT, dim)
    fast_incs = filt.run(trace.increments)
    assert filt.n_recenters > 0
    np.testing.assert_allclose(fast_incs, dense_incs, atol=1e-10)
    assert filt.center_q == pytest.approx(state.rho.center_q, abs=1e-9)
    np.testing.assert_allclose(filt.rho.entries, state.rho.entries, atol=1e-10)


def test_driven_fast_filter_converges_to_dense(ref_params):
    # the fast path applies the drive inside the Kraus operator and the dense
    # path inside U; the two splittings agree to first order in dt
    params = ref_params.replace(g=0.3)
    dim, t_end = 24, 3.0
    gaps = []
    for dt in (0.004, 0.002):
        n = int(round(t_end / dt))
        dys = np.zeros(n)
        state = QuantumFilterState(thermal_state(dim, params.n_thermal))
        for dy in dys:
            state = condition_step(state, dy, dt, params)
        filt = QuantumFilter(params, dt, dim)
        filt.run(dys)
        dense_q = expectation(state.rho, FockOperators.build(dim).q) + state.rho.center_q
        gaps.append(abs(filt.mean_position - dense_q))
    assert gaps[0] < 1e-3
    assert 1.6 < gaps[0] / gaps[1] < 2.5


def test_replay_is_bit_identical(ref_params):
    trace, incs = simulate_quantum_trace(ref_params, 2000, DT, seed=9, dim=30,
                                         return_logliks=True)
    replay = QuantumFilter(ref_params, DT, 30).run(trace.increments)
    np.testing.assert_array_equal(incs, replay)
    assert trace.truth_tag == "Q" and trace.seed == 9


def test_simulation_deterministic(ref_params):
    a = simulate_quantum_trace(ref_params, 300, DT, seed=3, dim=20)
    b = simulate_quantum_trace(ref_params, 300, DT, seed=3, dim=20)
    c = simulate_quantum_trace(ref_params, 300, DT, seed=4, dim=20)
    np.testing.assert_array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)


def test_innovations_are_white_under_true_model(ref_params):
    n = 20000
    trace = simulate_quantum_trace(ref_params, n, DT, seed=2, dim=30)
    filt = QuantumFilter(ref_params, DT, 30)
    innov = np.empty(n)
    for i, dy in enumerate(trace.increments):
        innov[i] = dy - filt.predicted_increment()
        filt.step(dy)
    assert abs(innov.mean()) / math.sqrt(DT / n) < 4
    assert innov.var() / DT == pytest.approx(1.0, rel=0.05)
    lag1 = np.corrcoef(innov[1:], innov[:-1])[0, 1]
    assert abs(lag1) < 4 / math.sqrt(n)


def test_zero_efficiency_likelihood_ignores_state(ref_params):
    params = ref_params.replace(eta=0.0)
    dys = np.random.default_rng(5).standard_normal(200) * math.sqrt(DT)
    incs = QuantumFilter(params, DT, 20).run(dys)
    np.testing.assert_allclose(incs, [gaussian_loglik(dy, DT) for dy in dys], atol=1e-14)


def test_harmonic_steady_state_occupation():
    # d<n>/dt = -Gamma <n> + Gamma nbar + k for the damped, monitored oscillator
    params = DuffingParams(beta=0.0, double_well=False, eta=0.0)
    dim, dt = 30, 2 * math.pi / 500
    filt = QuantumFilter(params, dt, dim)
    for _ in range(int(150 / dt)):
        filt.step(0.0)
    ops = FockOperators.build(dim)
    n = expectation(filt.rho, ops.adag @ ops.a)
    assert n == pytest.approx(params.n_thermal + params.k_meas / params.gamma_damp, rel=0.02)


def test_double_well_steady_state_matches_liouvillian_null_space(ref_params):
    params = ref_params.replace(eta=0.0)
    dim, dt = 24, 2 * math.pi / 500
    ls, _ = build_lindblads(dim, params)
    rho_ss = steady_state(build_duffing_hamiltonian(dim, params), ls)
    filt = QuantumFilter(params, dt, dim)
    for _ in range(int(200 / dt)):
        filt.step(0.0)
    assert filt.n_recenters == 0
    np.testing.assert_allclose(filt.rho.entries, rho_ss, atol=3e-3)


def test_filter_initial_state_and_errors(ref_params):
    with pytest.raises(ValueError):
        QuantumFilter(ref_params, 0.0)
    with pytest.raises(ValueError):
        QuantumFilter(ref_params, DT, 10, rho0=thermal_state(12, 0.1))
    off = DensityMatrix(np.diag([0.0, 1.0] + [0.0] * 18), center_q=1.0)
    filt = QuantumFilter(ref_params, DT, 20, rho0=off)
    assert filt.mean_position == pytest.approx(1.0)
    with pytest.raises(StepFailureError):
        filt.step(math.inf)


def test_filter_state_snapshot(ref_params):
    filt = QuantumFilter(ref_params, DT, 16)
    filt.run([0.01, -0.02])
    snap = filt.state
    assert snap.step_index == 2
    assert snap.loglik == filt.loglik
    snap.rho.validate()

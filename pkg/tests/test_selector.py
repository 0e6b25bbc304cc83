import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from qcselect.classical import simulate_classical_trace
from qcselect.errors import ConfigError, SelectionError
from qcselect.params import DuffingParams, Numerics
from qcselect.selector import (
    Candidate,
    PosteriorState,
    default_candidates,
    gaussian_loglik,
    np_select,
    run_selection,
    update_posteriors,
)
from qcselect.trace import TimeTrace

SMALL = Numerics(dim=30, n_cycles=1, n_particles=200)
DT = SMALL.dt()

logliks = st.lists(st.floats(-50, 50), min_size=2, max_size=6)


def posterior(probs):
    return PosteriorState(tuple(f"m{i}" for i in range(len(probs))), np.log(probs),
                          np.zeros(len(probs)))


def test_gaussian_loglik_examples():
    assert gaussian_loglik(0.0, 0.01) == pytest.approx(math.log(3.98942280401), abs=1e-10)
    assert gaussian_loglik(0.0, 0.01) == pytest.approx(1.38364, abs=1e-5)
    assert gaussian_loglik(0.0, 1 / (2 * math.pi)) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(1e-6, 10.0))
def test_one_sigma_costs_one_half(dt):
    assert gaussian_loglik(math.sqrt(dt), dt) - gaussian_loglik(0.0, dt) == pytest.approx(-0.5)


@given(st.floats(-5, 5), st.floats(1e-4, 1.0))
def test_gaussian_loglik_matches_scipy(dW, dt):
    from scipy.stats import norm

    assert gaussian_loglik(dW, dt) == pytest.approx(norm.logpdf(dW, scale=math.sqrt(dt)),
                                                    rel=1e-12, abs=1e-12)


def test_update_examples():
    ps = PosteriorState.uniform(("Q", "C"))
    np.testing.assert_allclose(ps.probabilities, [0.5, 0.5])
    out = update_posteriors(ps, [math.log(2.0), 0.0])
    np.testing.assert_allclose(out.probabilities, [2 / 3, 1 / 3], rtol=1e-14)
    same = update_posteriors(ps, [3.7, 3.7])
    np.testing.assert_allclose(same.probabilities, ps.probabilities, rtol=1e-15)
    with pytest.raises(ValueError):
        update_posteriors(ps, [1.0])


def test_equal_increments_keep_uniform_exactly():
    ps = PosteriorState.uniform(("a", "b"))
    for x in np.random.default_rng(3).normal(1.0, 0.5, 100_000):
        ps = update_posteriors(ps, [x, x])
    assert ps.probabilities[0] == ps.probabilities[1] == 0.5


@given(logliks)
def test_normalised(lls):
    ps = PosteriorState(tuple(range(len(lls))), np.array(lls), np.zeros(len(lls)))
    assert abs(ps.probabilities.sum() - 1.0) < 1e-12


@given(logliks, st.randoms(use_true_random=False))
def test_permutation_equivariance(lls, rnd):
    ids = tuple(f"m{i}" for i in range(len(lls)))
    perm = list(range(len(lls)))
    rnd.shuffle(perm)
    a = PosteriorState.uniform(ids)
    b = PosteriorState.uniform(tuple(ids[i] for i in perm))
    a = update_posteriors(a, lls)
    b = update_posteriors(b, [lls[i] for i in perm])
    np.testing.assert_allclose(b.probabilities, a.probabilities[perm], rtol=1e-12, atol=1e-300)


def test_np_select_examples():
    assert np_select(posterior([0.6, 0.4]), 1.0).selected == "m0"
    assert np_select(posterior([0.6, 0.4]), 2.0).inconclusive
    assert np_select(posterior([0.5, 0.5]), 1.0).inconclusive
    assert np_select(posterior([0.2, 0.8]), 1.0).selected == "m1"
    assert np_select(posterior([0.2, 0.8]), math.inf).inconclusive
    with pytest.raises(ValueError):
        np_select(posterior([0.6, 0.4]), 0.5)


def test_ratio_exactly_mu_is_inconclusive():
    ps = PosteriorState(("a", "b"), np.array([math.log(2.0), 0.0]), np.zeros(2))
    assert np_select(ps, 2.0).inconclusive
    assert np_select(ps, 1.999).selected == "a"


@given(logliks)
def test_mu_one_is_bayes_argmax(lls):
    arr = np.array(lls)
    top = np.sort(arr)[-2:]
    assume(top[1] - top[0] > 1e-9)
    ps = PosteriorState(tuple(range(len(lls))), arr, np.zeros(len(lls)))
    assert np_select(ps, 1.0).selected == int(np.argmax(arr))


@given(logliks, st.floats(1.0, 1e6), st.floats(1.0, 1e6))
def test_selection_down_closed_in_mu(lls, m1, m2):
    lo, hi = sorted((m1, m2))
    ps = PosteriorState(tuple(range(len(lls))), np.array(lls), np.zeros(len(lls)))
    d = np_select(ps, hi)
    if not d.inconclusive:
        assert np_select(ps, lo).selected == d.selected
        p = ps.probabilities
        others = np.delete(ps.log_evidence, d.selected)
        assert np.all(ps.log_evidence[d.selected] - others > math.log(hi))
        assert p[d.selected] == p.max()


def test_long_accumulation_stays_finite(rng):
    ps = PosteriorState.uniform(("Q", "C"))
    dys = rng.standard_normal((200_000, 2)) * math.sqrt(DT) * 30
    incs = -dys**2 / (2 * DT) - 0.5 * math.log(2 * math.pi * DT)
    total = incs.sum(axis=0)
    for row in incs[::1000]:
        ps = update_posteriors(ps, row * 1000)
    assert np.all(np.isfinite(ps.logliks)) and np.all(np.isfinite(ps.probabilities))
    assert np.isfinite(total).all()
    assert abs(ps.probabilities.sum() - 1) < 1e-12


def test_candidate_kind_checked():
    with pytest.raises(ConfigError):
        Candidate("X", "neural")


def test_filter_seed_ignores_label():
    a, b = Candidate("C", "classical"), Candidate("other", "classical")
    assert a.filter_seed(4, SMALL) == b.filter_seed(4, SMALL)
    assert a.filter_seed(4, SMALL) != a.filter_seed(5, SMALL)


@pytest.mark.parametrize("kind", ["classical", "quantum"])
def test_identical_candidates_pin_posterior(kind, ref_params):
    trace = simulate_classical_trace(ref_params, 1500, DT, seed=2)
    cands = [Candidate("A", kind, ref_params), Candidate("B", kind, ref_params)]
    res = run_selection(trace, cands, SMALL, seed=9)
    assert res.history.shape == (1501, 2)
    np.testing.assert_allclose(res.history, 0.5, atol=1e-9)
    assert np_select(res.posterior, 1.0).inconclusive


def test_zero_efficiency_never_discriminates(rng):
    params = DuffingParams(eta=0.0)
    for seed in range(3):
        trace = simulate_classical_trace(params, 500, DT, seed=seed)
        res = run_selection(trace, default_candidates(params), SMALL, seed=seed)
        expected = [gaussian_loglik(dy, DT) for dy in trace.increments]
        for m in range(2):
            np.testing.assert_allclose(res.increments[:, m], expected, rtol=1e-12)
        assert np.abs(res.history[:, 0] - 0.5).mean() < 0.1


def test_history_is_running_posterior(ref_params):
    trace = simulate_classical_trace(ref_params, 300, DT, seed=4)
    res = run_selection(trace, default_candidates(ref_params), SMALL, seed=1)
    ps = PosteriorState.uniform(res.posterior.model_ids)
    for n in (0, 1, 150, 300):
        if n:
            ps = PosteriorState(ps.model_ids, res.increments[:n].sum(axis=0), ps.log_prior)
        np.testing.assert_allclose(res.history[n], ps.probabilities, rtol=1e-9)
    np.testing.assert_allclose(res.posterior.logliks, res.increments.sum(axis=0), rtol=1e-12)


def test_precomputed_increments_used(ref_params):
    trace = simulate_classical_trace(ref_params, 50, DT, seed=4)
    fake = np.full(50, -1.0)
    res = run_selection(trace, default_candidates(ref_params), SMALL, precomputed={0: fake})
    np.testing.assert_array_equal(res.increments[:, 0], fake)


def test_filter_failure_is_tagged(ref_params):
    trace = TimeTrace(DT, np.r_[np.zeros(5), 1e200, np.zeros(5)])
    with pytest.raises(SelectionError) as info:
        run_selection(trace, [Candidate("C", "classical", ref_params)], SMALL)
    assert info.value.model_id == "C" and info.value.step == 5


def test_custom_prior(ref_params):
    trace = TimeTrace(DT, np.zeros(0))
    res = run_selection(trace, default_candidates(ref_params), SMALL, prior=[0.9, 0.1])
    np.testing.assert_allclose(res.posterior.probabilities, [0.9, 0.1])

import copy
import warnings

import numpy as np
import pytest

from deltaiss.certificate import decay_lmi_max_eig
from deltaiss.plant import ExcitationSpec, collect_pair, spacecraft
from deltaiss.verify import (FingerprintMismatch, MissingRhoBound, PairTrace, builtin_signal,
                             convergence_report, gronwall_check, monotone_after,
                             recheck_certificate, sampled_decay_fraction,
                             simulate_closed_loop_pair, verify_pairs)

# Matrices printed for the spacecraft case study (epsilon 0.9, vartheta 0.44)
P_REPORTED = np.array([[1.9087, -0.1404, -0.1441],
                       [-0.1404, 5.3907, 0.1229],
                       [-0.1441, 0.1229, 2.8604]])
SIGMA_REPORTED = np.array([[-0.7926, 0.0245, 0.0058],
                           [-0.0459, -0.6426, 0.0088],
                           [-0.0195, 0.0130, -0.6633]])


def synthetic_trace(V, times, seed=0, inputs_differ=False):
    k = times.size
    u = np.zeros((1, k))
    ut = u + (1.0 if inputs_differ else 0.0)
    return PairTrace(times, np.zeros((1, k)), np.zeros((1, k)), u, ut, V, np.sqrt(V),
                     np.gradient(V, times), seed)


def test_gronwall_exponential_oracle():
    t = np.linspace(0, 5, 501)
    tr = synthetic_trace(2 * np.exp(-t), t)
    assert gronwall_check(tr, 1.0).passed
    assert gronwall_check(tr, 0.9).passed
    res = gronwall_check(tr, 1.2)
    assert not res.passed and res.worst_time > 0
    assert sampled_decay_fraction(tr, 1.0, 1e-3) == 1.0


def test_gronwall_needs_rho_for_different_inputs():
    t = np.linspace(0, 1, 11)
    tr = synthetic_trace(np.exp(-t), t, inputs_differ=True)
    with pytest.raises(MissingRhoBound):
        gronwall_check(tr, 1.0)
    assert gronwall_check(tr, 1.0, rho_bound=1.0).passed


def test_monotone_after():
    t = np.arange(5.0)
    assert monotone_after(t, np.array([1.0, 2.0, 1.5, 1.0, 0.5])) == 1.0
    assert monotone_after(t, np.array([4.0, 3.0, 2.0, 1.0, 0.5])) == 0.0


def test_convergence_report_sorted_by_seed():
    t = np.linspace(0, 1, 11)
    traces = [synthetic_trace(np.exp(-2 * t), t, seed=s) for s in (3, 1, 2)]
    rep = convergence_report(traces)
    assert rep.seeds == [1, 2, 3]
    assert rep.terminal_ratios[0] == pytest.approx(np.exp(-1.0))


def test_builtin_signal_cycles():
    u = builtin_signal("sincos", 4)
    t = 0.7
    np.testing.assert_allclose(u(t), [np.sin(3 * t), np.cos(2 * t), np.sin(t) ** 2, np.sin(3 * t)])
    with pytest.raises(ValueError):
        builtin_signal("noise", 1)


def test_reported_matrices_satisfy_decay_lmi():
    lam = decay_lmi_max_eig(P_REPORTED, SIGMA_REPORTED, 0.9, 0.44)
    assert lam == pytest.approx(-0.56771658, abs=1e-6)


def test_recheck_detects_sigma_perturbation(spacecraft_cert, spacecraft_pair):
    assert recheck_certificate(spacecraft_cert, spacecraft_pair).passed
    bad = copy.deepcopy(spacecraft_cert)
    bad.Sigma = bad.Sigma + 0.1
    rep = recheck_certificate(bad, spacecraft_pair)
    assert not rep.passed
    assert rep.closed_loop == pytest.approx(0.1, rel=1e-6)
    assert rep.worst_family() in ("closed_loop", "closed_loop_sibling")


def test_recheck_warns_on_other_data(spacecraft_cert):
    other = collect_pair(spacecraft(), ExcitationSpec(amplitude=50.0, seed=4),
                         [0.5, -0.2, 0.3], [-0.4, 0.6, 0.1], 100, 0.1)
    with pytest.warns(FingerprintMismatch):
        rep = recheck_certificate(spacecraft_cert, other)
    assert not rep.fingerprint_match


def test_closed_loop_pair_contracts(spacecraft_cert):
    sc = spacecraft()
    u = builtin_signal("sincos", 3)
    tr = simulate_closed_loop_pair(sc, spacecraft_cert, [5.0, -3.0, 2.0], [-4.0, 1.0, 0.0], u, u,
                                   10.0, 0.01)
    assert tr.inputs_equal
    assert gronwall_check(tr, spacecraft_cert.epsilon).passed
    assert tr.diff_norm[-1] < 1e-3 * tr.diff_norm[0]


def test_verify_pairs_small_batch(spacecraft_cert):
    summary = verify_pairs(spacecraft(), spacecraft_cert, n_pairs=2, horizon=5.0, step=0.01,
                           terminal_ratio_limit=0.1)
    assert summary.passed
    assert summary.to_dict()["n_pairs"] == 2


def test_verify_pairs_different_inputs_need_rho(spacecraft_cert):
    with pytest.raises(MissingRhoBound):
        verify_pairs(spacecraft(), spacecraft_cert, n_pairs=1, horizon=1.0, step=0.01,
                     signal="sincos", signal_tilde="zero")
    cert = copy.deepcopy(spacecraft_cert)
    cert.rho_bound = (1 / 200) ** 2 / cert.vartheta
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        summary = verify_pairs(spacecraft(), cert, n_pairs=1, horizon=2.0, step=0.01,
                               signal="sincos", signal_tilde="zero", terminal_ratio_limit=1.0)
    assert all(g.passed for g in summary.gronwall)


@pytest.fixture
def hand_cert():
    from deltaiss.certificate import Certificate
    from deltaiss.polyalg import MonomialDictionary, PolyMatrix
    d = MonomialDictionary.from_list(1, [(1,)])
    return Certificate(np.eye(1), np.eye(1), -np.eye(1), PolyMatrix.constant(1, [[1.0]]),
                       PolyMatrix.constant(1, [[-2.0]]), 0.5, 0.1, d, 1.0, 1.0)


@pytest.fixture
def unit_plant():
    from deltaiss.plant import PolySystem
    from deltaiss.polyalg import MonomialDictionary
    return PolySystem([[1.0]], [[1.0]], MonomialDictionary.from_list(1, [(1,)]))


def test_hand_instance_closed_form(hand_cert, unit_plant):
    zero = builtin_signal("zero", 1)
    tr = simulate_closed_loop_pair(unit_plant, hand_cert, [1.0], [-1.0], zero, zero, 5.0, 0.01)
    np.testing.assert_allclose(tr.diff_norm, 2 * np.exp(-tr.times), rtol=1e-8)
    # V = 4 e^{-2t} sits well under 4 e^{-0.5 t}
    assert gronwall_check(tr, 0.5).passed
    rep = convergence_report([tr])
    assert rep.monotone_after == [0.0]
    assert rep.terminal_norms[0] <= 2 * np.exp(-5.0) * (1 + 1e-6)


def test_identical_initial_states_give_zero_trace(hand_cert, unit_plant):
    u = builtin_signal("sin", 1)
    tr = simulate_closed_loop_pair(unit_plant, hand_cert, [0.7], [0.7], u, u, 1.0, 0.01)
    assert np.all(tr.V == 0) and np.all(tr.diff_norm == 0)
    assert gronwall_check(tr, 0.5).passed
    assert convergence_report([tr]).monotone_after == [0.0]


def test_inflated_sample_fails():
    t = np.linspace(0, 2, 201)
    V = np.exp(-t)
    V[150] *= 1.5
    assert not gronwall_check(synthetic_trace(V, t), 1.0).passed


def test_fresh_recheck_matches_stored_report(spacecraft_cert, spacecraft_pair):
    rep = recheck_certificate(spacecraft_cert, spacecraft_pair)
    assert rep.max_difference(spacecraft_cert.residual_report) <= 1e-10


def test_sampled_decay_and_positivity(spacecraft_cert):
    u = builtin_signal("sincos", 3)
    tr = simulate_closed_loop_pair(spacecraft(), spacecraft_cert, [3.0, -2.0, 1.0],
                                   [-1.0, 2.0, -3.0], u, u, 10.0, 0.005)
    assert sampled_decay_fraction(tr, spacecraft_cert.epsilon, 1e-6 * tr.V[0]) >= 0.99
    assert np.all(tr.V >= -1e-12)

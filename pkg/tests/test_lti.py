"""Learning-model state spaces, stability law, bounds, and spectra."""

import numpy as np
import pytest

from ctrlq import lti, qnet
from ctrlq.envs import Transition
from ctrlq.errors import ConfigurationError, SingularFrequencyError
from ctrlq.lti import LearningModel, NTKBounds, StateSpace, UncertaintyModel
from ctrlq.qnet import NTKPair


def model(t1, t2, g=1.0):
    return LearningModel(ntk=NTKPair(t1, t2), discount=g)


def test_nominal_ss_structure():
    ss = lti.nominal_ss(model(1.0, 1.0, 1.0))
    np.testing.assert_array_equal(ss.A, [[-1.0, 1.0], [-1.0, 1.0]])
    np.testing.assert_array_equal(ss.B, [[1.0], [1.0]])
    np.testing.assert_array_equal(ss.C, np.eye(2))
    assert ss.dt is None


def test_nominal_ss_target_network_row():
    # theta2 = 0 freezes the target row (the DDQN reading).
    ss = lti.nominal_ss(model(300.0, 0.0))
    np.testing.assert_array_equal(ss.A[1], [0.0, 0.0])


def test_nominal_eigenvalue_law_samples():
    rng = np.random.default_rng(0)
    for _ in range(200):
        t1, t2 = rng.uniform(0.0, 1e3, 2)
        g = rng.uniform(1e-6, 1.0)
        ss = lti.nominal_ss(LearningModel(ntk=NTKPair(t1, t2), discount=g))
        eigs = np.sort_complex(np.linalg.eigvals(ss.A))
        expected = np.sort_complex(np.array([0.0, g * t2 - t1], dtype=complex))
        np.testing.assert_allclose(eigs, expected, atol=1e-10)


def test_nominal_stability_closed_form():
    rep = lti.nominal_stability(model(2.0, 1.0, 0.5))
    np.testing.assert_array_equal(np.sort(rep.eigenvalues), [-1.5, 0.0])
    assert rep.stable and rep.marginal_zero_mode

    rep = lti.nominal_stability(model(200.0, 240.0, 1.0))
    assert 40.0 in rep.eigenvalues
    assert not rep.stable

    # Degenerate kernel pair: exactly marginal.
    rep = lti.nominal_stability(model(350.0, 350.0, 1.0))
    np.testing.assert_array_equal(rep.eigenvalues, [0.0, 0.0])
    assert not rep.stable


def test_nominal_stability_target_network_always_stable():
    for t1 in (1e-3, 1.0, 300.0):
        assert lti.nominal_stability(model(t1, 0.0)).stable


def test_augmented_ss_structure():
    ss = lti.augmented_ss(model(7.0, 3.0, 0.9))
    assert ss.n_states == 3 and ss.n_inputs == 3
    np.testing.assert_array_equal(ss.A[2], [-1.0, 0.0, 0.0])
    nominal = lti.nominal_ss(model(7.0, 3.0, 0.9))
    np.testing.assert_array_equal(ss.A[:2, :2], nominal.A)
    # input columns: (r, qhat2, u)
    np.testing.assert_array_equal(ss.B[:, 0], [7.0, 3.0, 1.0])
    np.testing.assert_array_equal(ss.B[:, 1], [0.0, 0.0, 0.9])
    np.testing.assert_array_equal(ss.B[:, 2], [7.0, 0.0, 0.0])


def test_augmented_controllability_in_ratio_band():
    # Controllable from u throughout the operating band (theta1 > 0 with
    # the kernel ratio bounded away from zero).
    rng = np.random.default_rng(1)
    for _ in range(50):
        t1 = rng.uniform(1e-2, 1e3)
        t2 = t1 * rng.uniform(0.8, 1.2)
        g = rng.uniform(0.5, 1.0)
        ss = lti.augmented_ss(LearningModel(ntk=NTKPair(t1, t2), discount=g))
        bu = ss.B[:, 2:3]
        ctrb = np.hstack([bu, ss.A @ bu, ss.A @ ss.A @ bu])
        assert np.linalg.matrix_rank(ctrb, tol=1e-9 * t1**3) == 3


def test_uncertainty_combined_structure():
    unc = UncertaintyModel(delta_q=np.array([0.2, 0.3]), delta_theta=0.5, delta_exp=0.4)
    combined = unc.combined()
    np.testing.assert_allclose(
        combined, [[0.7, 0.05], [0.05, 1.2]], rtol=1e-12
    )


def test_learning_model_validates_discount():
    with pytest.raises(ConfigurationError):
        LearningModel(ntk=NTKPair(1.0, 1.0), discount=0.0)
    with pytest.raises(ConfigurationError):
        LearningModel(ntk=NTKPair(1.0, 1.0), discount=1.5)


def test_bounds_validation_and_geometry():
    with pytest.raises(ConfigurationError):
        NTKBounds(0.0, 1.0, 0.5, 1.5)
    with pytest.raises(ConfigurationError):
        NTKBounds(1.0, 2.0, 1.5, 0.5)
    b = NTKBounds(200.0, 500.0, 0.8, 1.2)
    mid = b.midpoint()
    assert mid.theta1 == 350.0 and mid.theta2 == 350.0
    verts = b.vertices()
    assert len(verts) == 4
    assert {(v.theta1, round(v.theta2 / v.theta1, 12)) for v in verts} == {
        (200.0, 0.8), (200.0, 1.2), (500.0, 0.8), (500.0, 1.2)
    }
    assert b.contains(350.0, 350.0)
    assert not b.contains(100.0, 100.0)
    assert not b.contains(350.0, 90.0)


def _transitions_from_rollout(net, n, seed=0, greedy=True):
    from ctrlq import envs

    rng = np.random.default_rng(seed)
    out = []
    s = envs.reset("cartpole", rng)
    while len(out) < n:
        a = int(np.argmax(net.forward(s))) if greedy else int(rng.integers(2))
        s2, r, done = envs.step("cartpole", s, a)
        out.append(Transition(s, a, r, s2, done))
        s = envs.reset("cartpole", rng) if done else s2
    return out


def test_estimate_bounds_singleton_degenerate():
    net = qnet.init(4, 64, 2, seed=0)
    trs = _transitions_from_rollout(net, 1)
    b = lti.estimate_ntk_bounds(net, trs, safety=1.0)
    assert b.theta1_min == b.theta1_max
    assert b.ratio_min == b.ratio_max


def test_estimate_bounds_empty_rejected():
    net = qnet.init(4, 8, 2, seed=0)
    with pytest.raises(ConfigurationError):
        lti.estimate_ntk_bounds(net, [])


def test_estimate_bounds_contains_all_samples():
    net = qnet.init(4, 128, 2, seed=5)
    trs = _transitions_from_rollout(net, 300, seed=3, greedy=False)
    b = lti.estimate_ntk_bounds(net, trs, safety=1.0)
    for tr in trs:
        pair = qnet.ntk_for_transition(net, tr.s, tr.a, tr.s_next)
        assert b.theta1_min <= pair.theta1 <= b.theta1_max * (1 + 1e-12)
        ratio = pair.theta2 / pair.theta1
        assert b.ratio_min - 1e-12 <= ratio <= b.ratio_max + 1e-12


def test_estimate_bounds_safety_widens():
    net = qnet.init(4, 64, 2, seed=1)
    trs = _transitions_from_rollout(net, 50)
    tight = lti.estimate_ntk_bounds(net, trs, safety=1.0)
    wide = lti.estimate_ntk_bounds(net, trs, safety=1.1)
    assert wide.theta1_max > tight.theta1_max
    assert wide.ratio_max >= tight.ratio_max
    assert wide.ratio_min <= tight.ratio_min
    assert wide.theta1_min == tight.theta1_min


def test_estimate_bounds_ratio_near_one_for_small_steps():
    # Greedy transitions with s' ~ s keep the kernel ratio near 1.
    net = qnet.init(4, 256, 2, seed=2)
    trs = []
    rng = np.random.default_rng(8)
    for _ in range(30):
        s = rng.normal(size=4) * 0.3
        a = int(np.argmax(net.forward(s)))
        s2 = s + rng.normal(size=4) * 1e-6
        trs.append(Transition(s, a, 1.0, s2, False))
    b = lti.estimate_ntk_bounds(net, trs, safety=1.0)
    assert b.ratio_min <= 1.0 <= b.ratio_max or abs(b.ratio_min - 1.0) < 1e-4


def test_fft_constant_signal_all_dc():
    freqs, mags = lti.fft_spectrum(np.full(256, 3.0), dt=1.0)
    assert freqs[0] == 0.0
    assert mags[0] == pytest.approx(256 * 3.0)
    assert np.all(mags[1:] < 1e-9)


def test_fft_pure_sine_single_bin():
    n, f = 512, 16
    t = np.arange(n)
    sig = np.sin(2 * np.pi * f * t / n)
    freqs, mags = lti.fft_spectrum(sig, dt=1.0)
    assert np.argmax(mags) == f
    others = np.delete(mags, f)
    assert others.max() < 1e-8 * mags[f] + 1e-9


def test_fft_parseval():
    rng = np.random.default_rng(9)
    for n in (128, 255, 1024):
        sig = rng.normal(size=n)
        _, mags = lti.fft_spectrum(sig, dt=0.5)
        # one-sided rfft: interior bins count twice
        energy = mags[0] ** 2 + 2.0 * np.sum(mags[1:-1] ** 2)
        if n % 2 == 0:
            energy += mags[-1] ** 2
        else:
            energy += 2.0 * mags[-1] ** 2
        np.testing.assert_allclose(energy / n, np.sum(sig**2), rtol=1e-9)


def test_fft_rejects_short_signals():
    with pytest.raises(ValueError):
        lti.fft_spectrum(np.array([1.0]), dt=1.0)


def test_freq_response_static_system():
    d = np.array([[2.0, -1.0]])
    ss = StateSpace(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((1, 0)), d)
    resp = lti.freq_response(ss, np.array([0.0, 1.0, 100.0]))
    for k in range(3):
        np.testing.assert_array_equal(resp[k], d)


def test_freq_response_first_order_lag():
    ss = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    resp = lti.freq_response(ss, np.array([0.0, 1.0]))
    assert resp[0, 0, 0] == pytest.approx(1.0)
    assert resp[1, 0, 0] == pytest.approx(1.0 / (1.0 + 1.0j))


def test_freq_response_singular_at_imaginary_pole():
    ss = StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])  # integrator
    with pytest.raises(SingularFrequencyError):
        lti.freq_response(ss, np.array([0.0]))


def test_freq_response_rejects_discrete():
    ss = StateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]], dt=0.1)
    with pytest.raises(ConfigurationError):
        lti.freq_response(ss, np.array([1.0]))


def test_state_space_validation():
    with pytest.raises(ConfigurationError):
        StateSpace(np.zeros((2, 3)), np.zeros((2, 1)), np.eye(2), np.zeros((2, 1)))
    with pytest.raises(ConfigurationError):
        StateSpace(np.eye(2), np.zeros((3, 1)), np.eye(2), np.zeros((2, 1)))
    with pytest.raises(ConfigurationError):
        StateSpace(np.eye(2), np.zeros((2, 1)), np.eye(2), np.zeros((1, 1)))
    with pytest.raises(ConfigurationError):
        StateSpace(np.array([[np.nan, 0], [0, 1]]), np.zeros((2, 1)), np.eye(2),
                   np.zeros((2, 1)))

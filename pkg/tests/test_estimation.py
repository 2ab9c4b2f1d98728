import numpy as np
import pytest

from teleopsim.chain import JointState, bias_torques, compute_kinematics, jacobian, mass_matrix
from teleopsim.estimation import (EstimatorGains, ForceObserverState, RbfBank,
                                  RbfNetwork, adapt_weights, grid_centers,
                                  observe_interaction_force, rbf_eval,
                                  rbf_features)

from conftest import make_test_chain


def small_net(d=2, m=3):
    centers, widths = grid_centers(-np.ones(d), np.ones(d), 3)
    return RbfNetwork.zeros(centers, widths, m)


def test_rbf_zero_network_outputs_zero(rng):
    net = small_net()
    assert np.array_equal(rbf_eval(net, rng.normal(size=2)), np.zeros(3))


def test_rbf_peak_at_center():
    net = RbfNetwork(np.array([[0.5, -0.5]]), np.array([0.7]),
                     np.array([[2.0, -1.0]]), np.array([0.3, 0.1]))
    out = rbf_eval(net, np.array([0.5, -0.5]))
    assert np.allclose(out, np.array([2.3, -0.9]), atol=1e-12)


def test_rbf_far_input_decays_to_bias():
    net = RbfNetwork(np.array([[0.0, 0.0]]), np.array([0.5]),
                     np.array([[5.0, 5.0]]), np.array([0.2, -0.4]))
    out = rbf_eval(net, np.array([50.0, 50.0]))
    assert np.allclose(out, net.bias, atol=1e-12)


def test_grid_centers_layout():
    centers, widths = grid_centers([-1.0, -2.0], [1.0, 2.0], 3)
    assert centers.shape == (9, 2)
    assert np.allclose(sorted(set(centers[:, 0])), [-1.0, 0.0, 1.0])
    assert np.allclose(widths, np.full(9, 1.5))  # mean grid spacing


def test_adapt_zero_error_decays_weights():
    net = RbfNetwork(np.zeros((1, 2)), np.ones(1), np.array([[4.0, 0.0]]), np.array([1.0, 0.0]))
    gains = EstimatorGains(weight_gain=2.0, weight_leak=0.5, bias_gain=3.0, bias_leak=0.5)
    stepped = adapt_weights(net, np.zeros(2), np.zeros(2), gains, dt=0.01)
    assert np.all(np.abs(stepped.weights) < np.abs(net.weights) + 1e-12)
    assert stepped.weights[0, 0] == pytest.approx(4.0 * (1 - 0.01 * 2.0 * 0.5))
    assert stepped.bias[0] == pytest.approx(1.0 * (1 - 0.01 * 3.0 * 0.5))


def test_adapt_constant_error_fixed_point():
    # single center evaluated at the center: psi = 1, so the weight fixed
    # point is e / weight_leak
    gains = EstimatorGains(weight_gain=50.0, weight_leak=0.2, bias_gain=1e-6, bias_leak=1.0)
    net = RbfNetwork(np.zeros((1, 2)), np.ones(1), np.zeros((1, 2)), np.zeros(2))
    err = np.array([0.4, -0.2])
    for _ in range(20000):
        net = adapt_weights(net, np.zeros(2), err, gains, dt=1e-3)
    assert np.allclose(net.weights[0], err / gains.weight_leak, rtol=1e-3)


def test_adapt_rejects_bad_dt(rng):
    with pytest.raises(ValueError):
        adapt_weights(small_net(), np.zeros(2), np.zeros(3), EstimatorGains(), dt=0.0)


def test_rbf_gradient_matches_finite_difference(rng):
    net = RbfNetwork(rng.normal(size=(5, 3)), rng.uniform(0.5, 1.5, size=5),
                     rng.normal(size=(5, 2)), rng.normal(size=2))
    x = rng.normal(size=3)
    h = 1e-6
    psi = rbf_features(net, x)
    analytic = (net.centers - x) / net.widths[:, None] ** 2 * psi[:, None]  # dpsi/dx
    for k in range(3):
        xp = x.copy(); xp[k] += h
        xm = x.copy(); xm[k] -= h
        fd = (rbf_features(net, xp) - rbf_features(net, xm)) / (2 * h)
        denom = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(analytic[:, k] - fd) / denom) < 1e-4


def test_weight_norm_stays_bounded(rng):
    gains = EstimatorGains(weight_gain=20.0, weight_leak=0.1, bias_gain=5.0, bias_leak=0.1)
    net = small_net(d=2, m=2)
    bound_e = 0.5
    for _ in range(5000):
        err = rng.uniform(-bound_e, bound_e, size=2)
        x = rng.uniform(-1, 1, size=2)
        net = adapt_weights(net, x, err, gains, dt=1e-3)
    # psi_max = 1 per center; Frobenius-style bound with slack for the transient
    k = net.centers.shape[0]
    limit = np.sqrt(k) * bound_e * np.sqrt(2) / gains.weight_leak
    assert np.linalg.norm(net.weights) < limit


def test_rbf_bank_matches_single_network(rng):
    gains = EstimatorGains(weight_gain=3.0, weight_leak=0.2, bias_gain=2.0, bias_leak=0.1)
    centers, widths = grid_centers(-np.ones(2), np.ones(2), 3)
    bank = RbfBank.create(4, centers, widths, 3, gains)
    nets = [RbfNetwork.zeros(centers, widths, 3) for _ in range(4)]
    for _ in range(5):
        xs = rng.normal(size=(4, 2))
        errs = rng.normal(size=(4, 3))
        outs = bank.eval_and_adapt(xs, errs, dt=1e-3)
        for i in range(4):
            assert np.allclose(outs[i], rbf_eval(nets[i], xs[i]), atol=1e-12)
            nets[i] = adapt_weights(nets[i], xs[i], errs[i], gains, dt=1e-3)
    for i in range(4):
        assert np.allclose(bank.weights[i], nets[i].weights, atol=1e-12)
        assert np.allclose(bank.bias[i], nets[i].bias, atol=1e-12)


# ---------------------------------------------------------------------------
# force observer against a simulated plant

def _simulate(chain, q0, t_end, tip_force_fn, observer, dt=1e-3, hold_gain=(60.0, 25.0)):
    """Gravity-compensated PD hold plus an external tip wrench; observer in loop."""
    n = chain.dof
    q = q0.copy()
    dq = np.zeros(n)
    kp, kd = hold_gain
    estimates, truths, times = [], [], []
    t = 0.0
    while t < t_end:
        kin = compute_kinematics(chain, q)
        f_ext = tip_force_fn(t)
        tau = bias_torques(chain, q, dq, kin=kin) + kp * (q0 - q) - kd * dq
        est = observe_interaction_force(observer, chain, JointState(q, dq), tau, dt, kin=kin)
        m = mass_matrix(chain, q, kin)
        qdd = np.linalg.solve(m, tau - bias_torques(chain, q, dq, kin=kin)
                              + jacobian(chain, q, kin).T @ f_ext)
        dq = dq + dt * qdd
        q = q + dt * dq
        estimates.append(est.data.copy())
        truths.append(f_ext)
        times.append(t)
        t += dt
    return np.array(times), np.array(estimates), np.array(truths)


def test_observer_no_contact_reads_zero(rng):
    chain = make_test_chain(6, rotor=0.1)
    obs = ForceObserverState(gain=40.0)
    q0 = np.array([0.3, -0.7, 0.5, 0.4, -0.3, 0.6])
    t, est, _ = _simulate(chain, q0, 0.4, lambda t: np.zeros(6), obs)
    settled = est[t > 5.0 / obs.gain]
    assert np.max(np.linalg.norm(settled[:, :3], axis=1)) < 1.0


def test_observer_constant_force_converges():
    chain = make_test_chain(6, rotor=0.1)
    obs = ForceObserverState(gain=40.0)
    f_true = np.array([4.0, -2.0, 3.0, 0.0, 0.0, 0.5])
    q0 = np.array([0.3, -0.7, 0.5, 0.4, -0.3, 0.6])
    t, est, _ = _simulate(chain, q0, 0.8, lambda t: f_true, obs)
    final = est[-1]
    assert np.linalg.norm(final - f_true) < 0.02 * np.linalg.norm(f_true)


def test_observer_first_order_decay_rate():
    chain = make_test_chain(6, rotor=0.1)
    gain = 30.0
    obs = ForceObserverState(gain=gain)
    f_true = np.array([5.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    q0 = np.array([0.4, -0.6, 0.3, -0.5, 0.7, 0.2])
    t, est, truth = _simulate(chain, q0, 0.25, lambda t: f_true, obs)
    err = np.linalg.norm(est - truth, axis=1)
    # fit log error over the clean first-order stretch
    mask = (t > 0.01) & (t < 0.12) & (err > 1e-6)
    slope = np.polyfit(t[mask], np.log(err[mask]), 1)[0]
    assert abs(slope + gain) < 0.10 * gain


def test_observer_gain_sweep_monotone():
    chain = make_test_chain(6, rotor=0.1)
    f_true = np.array([3.0, 1.0, -2.0, 0.0, 0.0, 0.0])
    q0 = np.array([0.4, -0.6, 0.3, -0.5, 0.7, 0.2])
    errors = []
    for gain in (10.0, 30.0, 90.0):
        obs = ForceObserverState(gain=gain)
        t, est, truth = _simulate(chain, q0, 0.15, lambda t: f_true, obs)
        errors.append(np.linalg.norm(est[-1] - f_true))
    assert errors[0] > errors[1] > errors[2]


def test_observer_rejects_bad_gain():
    with pytest.raises(ValueError):
        ForceObserverState(gain=0.0)

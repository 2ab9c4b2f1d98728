import numpy as np
import pytest

from teleopsim.chain import (JointState, bias_torques, compute_kinematics,
                             jacobian, mass_matrix, velocity_pass)
from teleopsim.estimation import EstimatorGains
from teleopsim.master_control import (BarrierViolationError, ChainVdcController,
                                      VdcGains, barrier_term, body_control_force,
                                      joint_control_torque, recompose_torque,
                                      required_joint_velocity, required_velocity,
                                      rotate_twist)
from teleopsim.rigid_body import GravityVector, regressor
from teleopsim.spatial import MotionVector

from conftest import make_test_chain


# ---------------------------------------------------------------------------
# required velocity and joint rates

def test_required_velocity_passthrough_without_force(rng):
    v = rng.normal(size=6)
    assert np.array_equal(required_velocity(v, np.zeros(6), 80e-5), v)


def test_required_velocity_reflection_arithmetic():
    f = np.array([10.0, 0, 0, 0, 0, 0])
    out = required_velocity(np.zeros(6), f, 80e-5)
    assert out[0] == pytest.approx(-8e-3)
    assert np.allclose(out[1:], 0.0)


def test_required_velocity_linear_in_force(rng):
    a = 50e-5
    f1, f2 = rng.normal(size=6), rng.normal(size=6)
    v = rng.normal(size=6)
    lhs = required_velocity(v, f1 + f2, a)
    rhs = required_velocity(v, f1, a) + required_velocity(np.zeros(6), f2, a)
    assert np.allclose(lhs, rhs - np.zeros(6), atol=1e-12)


def test_required_joint_velocity_zero():
    j = np.eye(6)
    assert np.allclose(required_joint_velocity(j, np.zeros(6)), np.zeros(6))


def test_required_joint_velocity_consistency(rng):
    chain = make_test_chain(7)
    q = rng.uniform(-1.0, 1.0, size=7)
    j = jacobian(chain, q)
    v = rng.normal(size=6)
    dq_r = required_joint_velocity(j, v)
    assert np.allclose(j @ dq_r, v, atol=1e-9)


def test_required_joint_velocity_minimal_norm(rng):
    # redundant chain: compare against the least-squares oracle
    chain = make_test_chain(7)
    q = rng.uniform(-1.0, 1.0, size=7)
    j = jacobian(chain, q)
    v = rng.normal(size=6)
    dq_r = required_joint_velocity(j, v)
    oracle = np.linalg.lstsq(j, v, rcond=None)[0]
    assert np.allclose(dq_r, oracle, atol=1e-9)
    # any other solution in the solution set has larger norm
    null = np.eye(7) - np.linalg.pinv(j) @ j
    for _ in range(10):
        other = dq_r + null @ rng.normal(size=7)
        assert np.linalg.norm(other) >= np.linalg.norm(dq_r) - 1e-12


# ---------------------------------------------------------------------------
# body and joint laws

def test_body_control_force_zero_everything():
    out = body_control_force(np.zeros(6), np.zeros(6), np.full(6, 5.0),
                             np.zeros(6), np.zeros((6, 10)), np.zeros(10))
    assert np.array_equal(out, np.zeros(6))


def test_body_control_force_pure_feedback():
    e = np.zeros(6)
    e[2] = 1.0
    out = body_control_force(e, np.zeros(6), 4.0 * np.ones(6),
                             np.zeros(6), np.zeros((6, 10)), np.zeros(10))
    assert np.allclose(out, 4.0 * e)


def test_body_control_force_includes_feedforward(rng):
    y = regressor(MotionVector(rng.normal(size=6)), rng.normal(size=6))
    phi = rng.normal(size=10)
    out = body_control_force(np.zeros(6), np.zeros(6), np.ones(6),
                             np.zeros(6), y, phi)
    assert np.allclose(out, y @ phi, atol=1e-12)


def test_barrier_zero_error_zero_term():
    assert barrier_term(0.0, 0.0, k_b=0.2, c1=1.0) == 0.0
    assert joint_control_torque(0.0, 0.0, 10.0, 0.2, 1.0) == 0.0


def test_barrier_diverges_monotonically():
    vals = [barrier_term(e, 0.05, k_b=0.2, c1=1.0) for e in (0.10, 0.15, 0.19, 0.199)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 100.0


def test_barrier_violation_raises():
    with pytest.raises(BarrierViolationError):
        barrier_term(0.2, 0.0, k_b=0.2, c1=1.0)
    with pytest.raises(BarrierViolationError):
        joint_control_torque(0.25, 0.0, 10.0, 0.2, 1.0)


def test_barrier_degenerate_rate_zeroed():
    # reciprocal-rate factor drops out below the floor
    with_rate = barrier_term(0.1, 1e-9, 0.2, 1.0)
    plain = 0.1 / (0.2 ** 2 - 0.1 ** 2)
    assert with_rate == pytest.approx(plain)


def test_recompose_torque_cases(rng):
    screw = np.array([0, 0, 0, 0, 0, 1.0])
    assert recompose_torque(2.5, screw, np.zeros(6)) == 2.5
    f = np.zeros(6)
    f[5] = 7.0
    assert recompose_torque(0.0, screw, f) == 7.0


def test_recompose_matches_backward_recursion(rng):
    # whole-chain: screw-projected recursion forces equal the recursion torques
    from teleopsim.chain import force_pass
    chain = make_test_chain(5)
    q = rng.uniform(-1.0, 1.0, size=5)
    kin = compute_kinematics(chain, q)
    net = rng.normal(size=(5, 6))
    tip = rng.normal(size=6)
    f_b, taus = force_pass(kin, net, tip)
    for i in range(5):
        assert recompose_torque(0.0, chain.screws[i], f_b[i]) == pytest.approx(taus[i])


def test_rotate_twist(rng):
    from teleopsim.spatial import orthonormalize
    r = orthonormalize(rng.normal(size=(3, 3)))
    v = rng.normal(size=6)
    out = rotate_twist(r, v)
    assert np.allclose(out[:3], r @ v[:3])
    assert np.allclose(out[3:], r @ v[3:])


# ---------------------------------------------------------------------------
# closed-loop behavior of the full chain controller

def quiet_gains(**kw):
    defaults = dict(
        k_body_linear=60.0, k_body_angular=6.0, k_joint=15.0, k_b=0.2, c1=1.0,
        nal_gamma=1e6, nal_gamma0=1e-8, joint_gamma=1e6, joint_gamma0=1e-8,
        body_rbf=EstimatorGains(weight_gain=1e-9, weight_leak=1.0,
                                bias_gain=1e-9, bias_leak=1.0),
        joint_rbf=EstimatorGains(weight_gain=1e-9, weight_leak=1.0,
                                 bias_gain=1e-9, bias_leak=1.0))
    defaults.update(kw)
    return VdcGains(**defaults)


def run_tracking(chain, controller, q0, v_ref_tip_fn, t_end, dt=1e-3):
    n = chain.dof
    q = q0.copy()
    dq = np.zeros(n)
    gravity = GravityVector()
    err_tip = []
    for k in range(int(t_end / dt)):
        kin = compute_kinematics(chain, q)
        v_b, v_t = velocity_pass(kin, dq)
        tau, diag = controller.step(kin, q, dq, v_ref_tip_fn(k * dt), np.zeros(6), v_b=v_b)
        m = mass_matrix(chain, q, kin)
        qdd = np.linalg.solve(m, tau - bias_torques(chain, q, dq, gravity, kin))
        dq = dq + dt * qdd
        q = q + dt * dq
        err_tip.append(np.linalg.norm(diag.tip_required_velocity - v_t[-1]))
    return q, dq, np.array(err_tip)


def test_controller_tracks_constant_tip_velocity_exact_model():
    chain = make_test_chain(3, rotor=0.05)
    ctrl = ChainVdcController(chain, quiet_gains(), dt=1e-3,
                              gravity=GravityVector().g)
    q0 = np.array([0.3, -0.6, 0.4])
    # reference inside the 3-DoF chain's achievable twist space
    v_ref = jacobian(chain, q0) @ np.array([0.1, -0.08, 0.12])
    _, _, err = run_tracking(chain, ctrl, q0, lambda t: v_ref, t_end=1.0)
    assert err[-1] < 5e-3
    assert err[-1] < err[5]


def test_controller_rest_with_exact_feedforward():
    # no required motion, exact gravity feedforward: chain stays at rest
    chain = make_test_chain(3, rotor=0.05)
    ctrl = ChainVdcController(chain, quiet_gains(), dt=1e-3,
                              gravity=GravityVector().g)
    q0 = np.array([0.3, -0.6, 0.4])
    q, dq, _ = run_tracking(chain, ctrl, q0, lambda t: np.zeros(6), t_end=2.0)
    assert np.abs(q - q0).max() < 1e-6
    assert np.abs(dq).max() < 1e-6


def test_controller_barrier_aborts_when_bound_shrunk():
    chain = make_test_chain(3, rotor=0.05)
    ctrl = ChainVdcController(chain, quiet_gains(k_b=0.002), dt=1e-3,
                              gravity=GravityVector().g)
    q0 = np.array([0.3, -0.6, 0.4])
    v_ref = jacobian(chain, q0) @ np.array([0.8, 0.8, 0.8])
    with pytest.raises(BarrierViolationError) as exc:
        run_tracking(chain, ctrl, q0, lambda t: v_ref, t_end=1.0)
    assert "k_b" in str(exc.value)


def test_controller_feedback_doubling_shrinks_error():
    chain = make_test_chain(3, rotor=0.05)
    q0 = np.array([0.3, -0.6, 0.4])
    v_ref = np.zeros(6)
    v_ref[1] = 0.08

    def steady_err(gain_scale):
        g = quiet_gains(k_body_linear=60.0 * gain_scale, k_body_angular=6.0 * gain_scale,
                        k_joint=15.0 * gain_scale)
        ctrl = ChainVdcController(chain, g, dt=1e-3, gravity=GravityVector().g)
        _, _, err = run_tracking(chain, ctrl, q0, lambda t: v_ref, t_end=0.8)
        return err[-200:].mean()

    assert steady_err(2.0) < steady_err(1.0)

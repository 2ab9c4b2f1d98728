import numpy as np
import pytest

from teleopsim.chain import compute_kinematics, dls_inverse, force_pass, jacobian
from teleopsim.master_control import required_joint_velocity_dls, required_velocity
from teleopsim.spatial import transform_force_array
from teleopsim.surrogate_control import (EnvironmentModel,
                                         desired_environment_force,
                                         environment_force,
                                         piston_net_required_force,
                                         required_piston_force,
                                         tool_required_force)

from conftest import make_test_chain


# ---------------------------------------------------------------------------
# required velocity / DLS

def test_surrogate_required_velocity_zero_force(rng):
    v = rng.normal(size=6)
    assert np.array_equal(required_velocity(v, np.zeros(6), 80e-5), v)


def test_surrogate_contact_softening_arithmetic():
    f = np.array([1000.0, 0, 0, 0, 0, 0])
    out = required_velocity(np.zeros(6), f, 80e-5)
    assert out[0] == pytest.approx(-0.8)


def test_surrogate_required_velocity_linearity(rng):
    a = 80e-5
    v = rng.normal(size=6)
    f1, f2 = rng.normal(size=6), rng.normal(size=6)
    assert np.allclose(required_velocity(v, f1 + f2, a),
                       required_velocity(v, f1, a) - a * np.eye(6) @ f2, atol=1e-12)


def test_dls_required_rates_zero():
    j = np.eye(6)
    assert np.allclose(required_joint_velocity_dls(j, np.zeros(6), 0.01), np.zeros(6))


def test_dls_required_rates_approach_exact_solution(rng):
    j = rng.normal(size=(6, 6)) + 3.0 * np.eye(6)
    v = rng.normal(size=6)
    exact = np.linalg.solve(j, v)
    for lam in (1e-2, 1e-4, 1e-6):
        out = required_joint_velocity_dls(j, v, lam)
        if lam == 1e-6:
            assert np.allclose(out, exact, atol=1e-4)


def test_dls_bounded_at_gimbal_lock(rng):
    # wrist singularity: two aligned rotation columns -> rank-deficient J
    j = rng.normal(size=(6, 6))
    j[:, 5] = j[:, 4]
    lam = 0.01
    v = rng.normal(size=6)
    out = required_joint_velocity_dls(j, v, lam)
    assert np.linalg.norm(out) <= np.linalg.norm(v) / (2.0 * np.sqrt(lam)) + 1e-9


# ---------------------------------------------------------------------------
# environment

def env(**kw):
    defaults = dict(normal=[1.0, 0.0, 0.0], point=[0.5, 0.0, 0.0],
                    stiffness=1e5, damping=1e3, mass=0.0)
    defaults.update(kw)
    return EnvironmentModel(**defaults)


def test_no_contact_zero_force():
    e = env()
    f, contact = environment_force(e, np.array([0.6, 0.0, 0.0]), np.ones(6), np.ones(6))
    assert not contact
    assert np.array_equal(f, np.zeros(6))


def test_static_penetration_spring_force():
    e = env(damping=0.0)
    f, contact = environment_force(e, np.array([0.49, 0.0, 0.0]), np.zeros(6), np.zeros(6))
    assert contact
    # 1000 N of tool-on-wall force, directed into the material
    assert abs(f[0]) == pytest.approx(1e5 * 0.01)
    assert f[0] < 0.0
    assert np.allclose(f[1:], 0.0)


def test_environment_selection_restricts_axes(rng):
    e = env()
    v = rng.normal(size=6)
    f, _ = environment_force(e, np.array([0.48, 0.0, 0.0]), v, np.zeros(6))
    assert np.allclose(f[1:], 0.0)  # normal-only selection
    assert f[0] == pytest.approx(-1e5 * 0.02 + 1e3 * v[0])


def test_desired_force_equals_actual_when_rates_match(rng):
    e = env(mass=5.0)
    pos = np.array([0.47, 0.0, 0.0])
    v = rng.normal(size=6)
    a = rng.normal(size=6)
    f, _ = environment_force(e, pos, v, a)
    f_d = desired_environment_force(e, pos, v, a)
    assert np.array_equal(f, f_d)


def test_desired_force_differs_only_in_mass_term(rng):
    e = env(mass=5.0)
    pos = np.array([0.47, 0.0, 0.0])
    v = rng.normal(size=6)
    a = rng.normal(size=6)
    a_r = rng.normal(size=6)
    f, _ = environment_force(e, pos, v, a)
    f_d = desired_environment_force(e, pos, v, a_r)
    assert np.allclose(f_d - f, e.selection @ (5.0 * (a_r - a)), atol=1e-12)


def test_environment_rejects_negative_coefficients():
    with pytest.raises(ValueError):
        env(stiffness=-1.0)


def test_contact_force_continuous_at_onset():
    e = env(damping=0.0, mass=0.0)
    eps = 1e-9
    f_out, _ = environment_force(e, np.array([0.5 + eps, 0, 0]), np.zeros(6), np.zeros(6))
    f_in, _ = environment_force(e, np.array([0.5 - eps, 0, 0]), np.zeros(6), np.zeros(6))
    assert np.linalg.norm(f_in - f_out) < 1e-3


# ---------------------------------------------------------------------------
# tool force and piston output

def test_tool_required_force_free_motion_zero():
    out = tool_required_force(np.zeros(6), np.eye(3), np.zeros(3), np.zeros(6))
    assert np.array_equal(out, np.zeros(6))


def test_tool_required_force_identity_transform(rng):
    tip_f = rng.normal(size=6)
    out = tool_required_force(np.zeros(6), np.eye(3), np.zeros(3), tip_f)
    assert np.allclose(out, tip_f)


def test_tool_required_force_is_sum_of_parts(rng):
    from teleopsim.spatial import orthonormalize
    net = rng.normal(size=6)
    rot = orthonormalize(rng.normal(size=(3, 3)))
    tr = rng.normal(size=3)
    tip_f = rng.normal(size=6)
    out = tool_required_force(net, rot, tr, tip_f)
    assert np.allclose(out, net + transform_force_array(rot, tr, tip_f), atol=1e-12)


def test_piston_force_zero():
    assert required_piston_force(0.0, None, 0.0, gear_ratio=2.0) == 0.0


def test_piston_force_arithmetic():
    assert required_piston_force(10.0, None, 0.0, gear_ratio=2.0) == pytest.approx(5.0)
    screw = np.array([0, 0, 0, 0, 0, 1.0])
    wrench = np.zeros(6)
    wrench[5] = 10.0
    assert required_piston_force(wrench, screw, 0.0, 2.0) == pytest.approx(5.0)


def test_piston_force_rejects_bad_ratio():
    with pytest.raises(ValueError):
        required_piston_force(1.0, None, 0.0, gear_ratio=0.0)


def test_piston_net_force_helper():
    assert piston_net_required_force(0.0, 0.0, 2.0, 1.0, 1.0) == 0.0
    assert piston_net_required_force(3.0, 0.5, 2.0, dq_r=0.1, qdd_r=1.5) == \
        pytest.approx(3.0 * 2.0 * 1.5 + 0.5 * 2.0 * 0.1)


def test_piston_statics_torque_balance(rng):
    # static chain under gravity: actuator force times gear ratio reproduces
    # the holding joint torque
    from teleopsim.chain import bias_torques
    chain = make_test_chain(4, mass=5.0)
    q = rng.uniform(-1.0, 1.0, size=4)
    taus = bias_torques(chain, q, np.zeros(4))
    r_w = 2.5
    for i in range(4):
        f_c = required_piston_force(taus[i], None, 0.0, r_w)
        assert f_c * r_w == pytest.approx(taus[i])

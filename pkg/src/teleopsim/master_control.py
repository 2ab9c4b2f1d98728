"""Velocity-based decentralized control of one serial chain.

Each link's rigid-body subsystem gets a wrench command combining velocity
feedback, adaptive model feedforward (inertial estimates evolved on the
symmetric-matrix image) and an RBF compensation term; each joint gets a
torque command with velocity feedback, adaptive feedforward, an RBF bias
and a barrier term that diverges as the integrated tracking error
approaches its hard bound.  Joint commands recompose the body wrenches
through the screw axes.  The same machinery drives the 7-DoF master (with
pseudo-inverse kinematics) and, reused chain-wide, the 6-DoF surrogate
(with damped-least-squares kinematics).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import (ChainKinematics, ChainModel, acceleration_pass,
                    compute_kinematics, dls_inverse, force_pass, jacobian,
                    pseudo_inverse, velocity_pass)
from .estimation import EstimatorGains, RbfBank, grid_centers
from .rigid_body import nal_step_batch, regressor_batch
from .spatial import skew_many


class BarrierViolationError(RuntimeError):
    """A joint tracking error reached its hard barrier bound."""

    def __init__(self, joint: int, error: float, bound: float, chain: str = ""):
        self.joint = joint
        self.error = error
        self.bound = bound
        super().__init__(
            f"barrier violated on {chain} joint {joint}: |e_a|={abs(error):.4f} >= k_b={bound:.4f}")


# ---------------------------------------------------------------------------
# single-signal control operations

def required_velocity(v_desired: np.ndarray, force_estimate: np.ndarray,
                      a_matrix: np.ndarray | float) -> np.ndarray:
    """Force-reflection softening: ``V_r = V_d - A F``."""
    a = a_matrix * np.eye(6) if np.isscalar(a_matrix) else np.asarray(a_matrix, float)
    return np.asarray(v_desired, float) - a @ np.asarray(force_estimate, float)


def required_joint_velocity(j: np.ndarray, v_required: np.ndarray) -> np.ndarray:
    """Minimal-norm joint rates through the Moore-Penrose inverse.

    Raises ``SingularJacobianError`` near rank loss; callers needing a total
    map (spherical wrists at gimbal lock) use ``required_joint_velocity_dls``.
    """
    return pseudo_inverse(j) @ np.asarray(v_required, float)


def required_joint_velocity_dls(j: np.ndarray, v_required: np.ndarray,
                                lam: float) -> np.ndarray:
    return dls_inverse(j, lam) @ np.asarray(v_required, float)


def body_control_force(v_required: np.ndarray, v_actual: np.ndarray,
                       k_d: np.ndarray, rbf_estimate: np.ndarray,
                       regressor_y: np.ndarray, phi_hat: np.ndarray) -> np.ndarray:
    """Rigid-body wrench command: feedback + RBF compensation + model feedforward."""
    err = np.asarray(v_required, float) - np.asarray(v_actual, float)
    k_d = np.asarray(k_d, float)
    fb = k_d @ err if k_d.ndim == 2 else k_d * err
    return fb + np.asarray(rbf_estimate, float) + np.asarray(regressor_y, float) @ phi_hat


def barrier_term(e_a: float, e_dot: float, k_b: float, c1: float,
                 rate_floor: float = 1e-6) -> float:
    """Barrier torque ``(e_a + c1 e_a^2 / e_dot) / (k_b^2 - e_a^2)``.

    The reciprocal-rate factor is zeroed for degenerate rates; the term
    diverges as ``|e_a|`` approaches ``k_b``.
    """
    if abs(e_a) >= k_b:
        raise BarrierViolationError(0, e_a, k_b)
    num = e_a
    if abs(e_dot) > rate_floor:
        num = e_a + c1 * e_a * e_a / e_dot
    return num / (k_b * k_b - e_a * e_a)


def joint_control_torque(e_a: float, e_dot: float, k_d: float, k_b: float,
                         c1: float, adaptive_terms: float = 0.0) -> float:
    """Joint torque command: velocity feedback, adaptive terms, barrier."""
    return k_d * e_dot + adaptive_terms + barrier_term(e_a, e_dot, k_b, c1)


def recompose_torque(tau_star: float, screw: np.ndarray, f_r: np.ndarray) -> float:
    """Total joint command: joint-level torque plus the body wrench projected
    through the screw axis."""
    return float(tau_star + np.asarray(screw, float) @ np.asarray(f_r, float))


# ---------------------------------------------------------------------------
# full-chain controller

@dataclass
class VdcGains:
    """Gain set for one chain controller (all positivity checked on use)."""

    k_body_linear: float = 30.0
    k_body_angular: float = 3.0
    k_tool_linear: float | None = None
    k_tool_angular: float | None = None
    k_joint: float = 20.0
    k_b: float = 0.2
    c1: float = 1.0
    nal_gamma: float = 100.0
    nal_gamma0: float = 1e-4
    joint_gamma: float = 100.0
    joint_gamma0: float = 1e-4
    body_rbf: EstimatorGains = field(default_factory=lambda: EstimatorGains(
        weight_gain=5.0, weight_leak=1e-2, bias_gain=400.0, bias_leak=1e-3))
    joint_rbf: EstimatorGains = field(default_factory=lambda: EstimatorGains(
        weight_gain=5.0, weight_leak=1e-2, bias_gain=400.0, bias_leak=1e-3))
    rbf_error_bound: float = 0.5
    qddr_filter_c: float = 35.0
    qddr_limit: float = 100.0

    def k_body_matrix(self) -> np.ndarray:
        return np.array([self.k_body_linear] * 3 + [self.k_body_angular] * 3)

    def k_tool_matrix(self) -> np.ndarray:
        lin = self.k_tool_linear if self.k_tool_linear is not None else self.k_body_linear
        ang = self.k_tool_angular if self.k_tool_angular is not None else self.k_body_angular
        return np.array([lin] * 3 + [ang] * 3)


@dataclass
class ControllerDiagnostics:
    """Per-step values the harness logs."""

    barrier_margin: np.ndarray
    joint_velocity_error: np.ndarray
    tip_required_velocity: np.ndarray
    tip_required_acceleration: np.ndarray
    required_tip_velocity_frame: np.ndarray


class ChainVdcController:
    """Stateful controller for one chain at a fixed control period.

    The controller owns its (possibly perturbed) model of the chain, the
    per-link and per-joint adaptive states, and the integrated required
    joint positions that feed the barrier terms.
    """

    def __init__(self, model: ChainModel, gains: VdcGains, dt: float,
                 gravity: np.ndarray, use_dls: bool = False, dls_lambda: float = 0.01,
                 q0: np.ndarray | None = None):
        self.model = model
        self.gains = gains
        self.dt = float(dt)
        self.gravity = np.asarray(gravity, float)
        self.use_dls = use_dls
        self.dls_lambda = float(dls_lambda)
        n = model.dof
        self.n = n

        from .rigid_body import phi_to_L, InertialParams
        self.l_hat = np.stack([phi_to_L(link.inertia) for link in model.links])
        self.phi_hat = model.phi.copy()
        self.joint_l_hat = np.maximum(model.rotor_inertia, 1e-3).reshape(n, 1, 1).copy()

        bound = gains.rbf_error_bound
        centers, widths = grid_centers(-bound * np.ones(6), bound * np.ones(6), 3)
        self.body_rbf = RbfBank.create(n, centers, widths, 6, gains.body_rbf)
        jc, jw = grid_centers(np.array([-bound]), np.array([bound]), 3)
        self.joint_rbf = RbfBank.create(n, jc, jw, 1, gains.joint_rbf)

        self.q_r = None if q0 is None else np.asarray(q0, float).copy()
        self.prev_dq_r = np.zeros(n)
        self.qdd_r = np.zeros(n)
        self.k_body = np.tile(gains.k_body_matrix(), (n, 1))
        self.k_body[-1] = gains.k_tool_matrix()
        self.last_f_r = np.zeros((n, 6))
        self.last_tau = np.zeros(n)
        self.last_vr_t = np.zeros((n, 6))

    def joint_rates_from_tip(self, j: np.ndarray, v_required_tip: np.ndarray) -> np.ndarray:
        if self.use_dls:
            return required_joint_velocity_dls(j, v_required_tip, self.dls_lambda)
        return required_joint_velocity(j, v_required_tip)

    def step(self, kin: ChainKinematics, q: np.ndarray, dq: np.ndarray,
             v_required_tip: np.ndarray, tip_required_force: np.ndarray,
             v_b: np.ndarray | None = None, adapt: bool = True
             ) -> tuple[np.ndarray, ControllerDiagnostics]:
        """One control period: returns joint torque commands and diagnostics.

        ``v_required_tip`` is the required tip velocity in the tip frame;
        ``tip_required_force`` the wrench the chain should transmit onward at
        its tip, in the tip frame.
        """
        g = self.gains
        dt = self.dt
        n = self.n
        if v_b is None:
            v_b, _ = velocity_pass(kin, dq)

        j = jacobian(self.model, q, kin)
        dq_r = self.joint_rates_from_tip(j, v_required_tip)

        if self.q_r is None:
            self.q_r = q.copy()
        self.q_r = self.q_r + dt * dq_r
        e_a = self.q_r - q
        over = np.abs(e_a) >= g.k_b
        if np.any(over):
            idx = int(np.argmax(np.abs(e_a)))
            raise BarrierViolationError(idx, float(e_a[idx]), g.k_b, self.model.name)

        qdd_raw = (dq_r - self.prev_dq_r) / dt
        np.clip(qdd_raw, -g.qddr_limit, g.qddr_limit, out=qdd_raw)
        self.prev_dq_r = dq_r
        decay = np.exp(-g.qddr_filter_c * dt)
        self.qdd_r = qdd_raw + (self.qdd_r - qdd_raw) * decay

        vr_b, vr_t = velocity_pass(kin, dq_r)
        base_acc = np.concatenate([-self.gravity, np.zeros(3)])
        ar_b, ar_t = acceleration_pass(kin, vr_b, dq_r, self.qdd_r, base_acc)

        y = regressor_batch(vr_b, ar_b, np.zeros((n, 3)))
        v_err = vr_b - v_b

        if adapt:
            driving = np.einsum("nij,ni->nj", y, v_err)
            s = _phi_to_L_batch(driving)
            self.l_hat = nal_step_batch(self.l_hat, s, g.nal_gamma, g.nal_gamma0, dt)
            self.phi_hat = _L_to_phi_batch(self.l_hat)
            rbf_out = self.body_rbf.eval_and_adapt(v_err, v_err, dt)
        else:
            rbf_out = np.einsum("nk,nkm->nm", self.body_rbf.features(v_err),
                                self.body_rbf.weights) + self.body_rbf.bias

        f_star_r = (self.k_body * v_err + rbf_out
                    + np.einsum("nij,nj->ni", y, self.phi_hat))

        f_r, tau_a = force_pass(kin, f_star_r, tip_required_force)

        e_dot = dq_r - dq
        s_joint = (self.qdd_r * e_dot).reshape(n, 1, 1)
        if adapt:
            self.joint_l_hat = nal_step_batch(self.joint_l_hat, s_joint,
                                              g.joint_gamma, g.joint_gamma0, dt)
            joint_rbf_out = self.joint_rbf.eval_and_adapt(
                e_dot.reshape(n, 1), e_dot.reshape(n, 1), dt)[:, 0]
        else:
            joint_rbf_out = (np.einsum("nk,nkm->nm", self.joint_rbf.features(e_dot.reshape(n, 1)),
                                       self.joint_rbf.weights) + self.joint_rbf.bias)[:, 0]

        feedforward = self.joint_l_hat[:, 0, 0] * self.qdd_r
        rate = np.where(np.abs(e_dot) > 1e-6, e_dot, np.inf)
        barrier = (e_a + g.c1 * e_a * e_a / rate) / (g.k_b ** 2 - e_a ** 2)
        tau_star = g.k_joint * e_dot + feedforward + joint_rbf_out + barrier

        tau = tau_star + np.einsum("ni,ni->n", self.model.screws, f_r)
        self.last_f_r = f_r
        self.last_tau = tau
        self.last_vr_t = vr_t

        diag = ControllerDiagnostics(
            barrier_margin=g.k_b - np.abs(e_a),
            joint_velocity_error=e_dot,
            tip_required_velocity=vr_t[-1].copy(),
            tip_required_acceleration=ar_t[-1].copy(),
            required_tip_velocity_frame=vr_t[-1].copy(),
        )
        return tau, diag


def _phi_to_L_batch(phi: np.ndarray) -> np.ndarray:
    n = phi.shape[0]
    ia = phi[:, 4:]
    tr = 0.5 * (ia[:, 0] + ia[:, 3] + ia[:, 5])
    out = np.zeros((n, 4, 4))
    out[:, 0, 0] = tr - ia[:, 0]
    out[:, 1, 1] = tr - ia[:, 3]
    out[:, 2, 2] = tr - ia[:, 5]
    out[:, 0, 1] = out[:, 1, 0] = -ia[:, 1]
    out[:, 0, 2] = out[:, 2, 0] = -ia[:, 2]
    out[:, 1, 2] = out[:, 2, 1] = -ia[:, 4]
    out[:, :3, 3] = phi[:, 1:4]
    out[:, 3, :3] = phi[:, 1:4]
    out[:, 3, 3] = phi[:, 0]
    return out


def _L_to_phi_batch(l_hat: np.ndarray) -> np.ndarray:
    n = l_hat.shape[0]
    sigma = l_hat[:, :3, :3]
    tr = sigma[:, 0, 0] + sigma[:, 1, 1] + sigma[:, 2, 2]
    out = np.zeros((n, 10))
    out[:, 0] = l_hat[:, 3, 3]
    out[:, 1:4] = l_hat[:, :3, 3]
    out[:, 4] = tr - sigma[:, 0, 0]
    out[:, 5] = -sigma[:, 0, 1]
    out[:, 6] = -sigma[:, 0, 2]
    out[:, 7] = tr - sigma[:, 1, 1]
    out[:, 8] = -sigma[:, 1, 2]
    out[:, 9] = tr - sigma[:, 2, 2]
    return out


def rotate_twist(rotation: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Re-express a 6-vector (twist or wrench) through a pure rotation."""
    out = np.empty(6)
    out[:3] = rotation @ v[:3]
    out[3:] = rotation @ v[3:]
    return out

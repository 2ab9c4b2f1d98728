"""Serial-chain kinematics and dynamics built on body-frame spatial recursions.

A chain is an ordered list of links.  Link ``i`` hangs from the tip frame
``T_{i-1}`` of its parent through a fixed mount transform, a one-DoF joint
(screw ``sigma_i``, expressed in the link base frame ``B_i``), and carries a
fixed transform from ``B_i`` to its own tip frame ``T_i``.  Velocities
propagate base-to-tip, forces tip-to-base; the same recursions run on
actual signals and on required (control target) signals.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rigid_body import GravityVector, InertialParams
from .spatial import (ForceVector, FrameTransform, MotionVector,
                      motion_cross_array, skew, transform_force_array,
                      transform_motion_array)


class SingularJacobianError(ValueError):
    """Pseudo-inverse requested on a rank-deficient Jacobian; use the damped inverse."""


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation matrix (Shepperd's method)."""
    t = np.trace(r)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(r[i, i] - r[j, j] - r[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle (rad) represented by a unit quaternion."""
    return 2.0 * float(np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


@dataclass(frozen=True)
class Pose:
    """Task-space pose: position plus unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,) or q.shape != (4,):
            raise ValueError("position must be (3,), orientation (4,)")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("orientation quaternion must be unit norm")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


def pose_error(master: Pose, surrogate: Pose, kappa_p: float = 1.0) -> np.ndarray:
    """Scaled pose error: ``kappa_p * p_m - p_s`` stacked with the quaternion
    error vector part of ``conj(q_s) * q_m`` (scalar part kept non-negative).

    Motion scaling applies to translation only; orientation maps one-to-one.
    """
    q_err = quat_multiply(quat_conjugate(surrogate.orientation), master.orientation)
    if q_err[0] < 0.0:
        q_err = -q_err
    return np.concatenate([kappa_p * master.position - surrogate.position, q_err[1:]])


# ---------------------------------------------------------------------------
# chain model

@dataclass(frozen=True)
class LinkSpec:
    """One link: fixed mount from the parent tip, joint screw, fixed tip, inertia."""

    mount: FrameTransform
    screw: np.ndarray
    tip: FrameTransform
    inertia: InertialParams
    joint_limit: tuple[float, float] = (-3.1, 3.1)
    rotor_inertia: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.screw, dtype=float)
        if s.shape != (6,):
            raise ValueError("screw must be a 6-vector [linear; angular]")
        lin, ang = np.linalg.norm(s[:3]), np.linalg.norm(s[3:])
        if not (abs(ang - 1.0) < 1e-9 and lin < 1e-9) and not (ang < 1e-9 and abs(lin - 1.0) < 1e-9):
            raise ValueError("screw must be a unit revolute ([0; a]) or prismatic ([a; 0]) axis")
        object.__setattr__(self, "screw", s)

    @property
    def is_revolute(self) -> bool:
        return np.linalg.norm(self.screw[3:]) > 0.5


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    ax = skew(axis)
    return np.eye(3) + np.sin(angle) * ax + (1.0 - np.cos(angle)) * (ax @ ax)


@dataclass(frozen=True)
class ChainModel:
    """Immutable serial-chain description; per-link arrays are precomputed."""

    links: tuple[LinkSpec, ...]
    name: str = "chain"
    mount_rot: np.ndarray = field(init=False, repr=False)
    mount_tr: np.ndarray = field(init=False, repr=False)
    tip_rot: np.ndarray = field(init=False, repr=False)
    tip_tr: np.ndarray = field(init=False, repr=False)
    screws: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)
    spatial_inertia: np.ndarray = field(init=False, repr=False)
    rotor_inertia: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        links = tuple(self.links)
        object.__setattr__(self, "links", links)
        n = len(links)
        if n == 0:
            raise ValueError("chain needs at least one link")
        object.__setattr__(self, "mount_rot", np.array([l.mount.rotation for l in links]))
        object.__setattr__(self, "mount_tr", np.array([l.mount.translation for l in links]))
        object.__setattr__(self, "tip_rot", np.array([l.tip.rotation for l in links]))
        object.__setattr__(self, "tip_tr", np.array([l.tip.translation for l in links]))
        object.__setattr__(self, "screws", np.array([l.screw for l in links]))
        object.__setattr__(self, "phi", np.array([l.inertia.phi for l in links]))
        object.__setattr__(self, "spatial_inertia",
                           np.array([l.inertia.spatial_mass_matrix() for l in links]))
        object.__setattr__(self, "rotor_inertia",
                           np.array([l.rotor_inertia for l in links]))

    @property
    def dof(self) -> int:
        return len(self.links)

    def joint_limits(self) -> np.ndarray:
        return np.array([l.joint_limit for l in self.links])

    def with_inertias(self, params: list[InertialParams],
                      rotor: np.ndarray | None = None) -> "ChainModel":
        """Copy of the chain with replaced link inertias (same geometry)."""
        rotor = self.rotor_inertia if rotor is None else np.asarray(rotor, float)
        links = tuple(
            LinkSpec(l.mount, l.screw, l.tip, p, l.joint_limit, float(ri))
            for l, p, ri in zip(self.links, params, rotor))
        return ChainModel(links, self.name)


@dataclass
class JointState:
    """Joint positions and velocities of one chain."""

    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.dq = np.asarray(self.dq, dtype=float)
        if self.q.shape != self.dq.shape or self.q.ndim != 1:
            raise ValueError("q and dq must be 1-D arrays of equal length")

    def check(self, chain: ChainModel):
        if self.q.shape[0] != chain.dof:
            raise ValueError(f"state has {self.q.shape[0]} joints, chain {chain.dof}")


# ---------------------------------------------------------------------------
# per-configuration kinematics cache

@dataclass
class ChainKinematics:
    """Joint-dependent transforms of one configuration, shared by all passes.

    ``rot_pb``/``tr_pb`` give the parent-tip to link-base transform including
    the joint motion; ``rot_wb``/``pos_wb`` and ``rot_wt``/``pos_wt`` are the
    base-frame (world) poses of the link base and tip frames.
    """

    chain: ChainModel
    q: np.ndarray
    rot_pb: np.ndarray
    tr_pb: np.ndarray
    rot_wb: np.ndarray
    pos_wb: np.ndarray
    rot_wt: np.ndarray
    pos_wt: np.ndarray

    @property
    def tip_pose(self) -> Pose:
        return Pose(self.pos_wt[-1].copy(), quat_from_matrix(self.rot_wt[-1]))


def compute_kinematics(chain: ChainModel, q: np.ndarray) -> ChainKinematics:
    q = np.asarray(q, dtype=float)
    n = chain.dof
    rot_pb = np.empty((n, 3, 3))
    tr_pb = np.empty((n, 3))
    rot_wb = np.empty((n, 3, 3))
    pos_wb = np.empty((n, 3))
    rot_wt = np.empty((n, 3, 3))
    pos_wt = np.empty((n, 3))

    r_w = np.eye(3)
    p_w = np.zeros(3)
    for i, link in enumerate(chain.links):
        if link.is_revolute:
            rj = _rodrigues(link.screw[3:], q[i])
            rot_pb[i] = chain.mount_rot[i] @ rj
            tr_pb[i] = chain.mount_tr[i]
        else:
            rot_pb[i] = chain.mount_rot[i]
            tr_pb[i] = chain.mount_tr[i] + chain.mount_rot[i] @ (link.screw[:3] * q[i])
        p_w = p_w + r_w @ tr_pb[i]
        r_w = r_w @ rot_pb[i]
        rot_wb[i] = r_w
        pos_wb[i] = p_w
        p_w = p_w + r_w @ chain.tip_tr[i]
        r_w = r_w @ chain.tip_rot[i]
        rot_wt[i] = r_w
        pos_wt[i] = p_w
    return ChainKinematics(chain, q, rot_pb, tr_pb, rot_wb, pos_wb, rot_wt, pos_wt)


def tip_pose(chain: ChainModel, q: np.ndarray) -> Pose:
    return compute_kinematics(chain, q).tip_pose


# ---------------------------------------------------------------------------
# velocity / acceleration / force passes (array kernels)

def velocity_pass(kin: ChainKinematics, dq: np.ndarray,
                  base_velocity: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Base-to-tip spatial velocities: returns (v_base_frames, v_tip_frames)."""
    chain = kin.chain
    n = chain.dof
    v_b = np.empty((n, 6))
    v_t = np.empty((n, 6))
    v = np.zeros(6) if base_velocity is None else np.asarray(base_velocity, float)
    for i in range(n):
        v = transform_motion_array(kin.rot_pb[i], kin.tr_pb[i], v) + chain.screws[i] * dq[i]
        v_b[i] = v
        v = transform_motion_array(chain.tip_rot[i], chain.tip_tr[i], v)
        v_t[i] = v
    return v_b, v_t


def acceleration_pass(kin: ChainKinematics, v_b: np.ndarray, dq: np.ndarray,
                      qdd: np.ndarray, base_acceleration: np.ndarray | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Base-to-tip componentwise derivatives of the body-frame velocities.

    Passing ``base_acceleration = [-g; 0]`` folds gravity into the
    propagated acceleration, which is how the dynamics passes consume it.
    """
    chain = kin.chain
    n = chain.dof
    a_b = np.empty((n, 6))
    a_t = np.empty((n, 6))
    a = np.zeros(6) if base_acceleration is None else np.asarray(base_acceleration, float)
    for i in range(n):
        sig_dq = chain.screws[i] * dq[i]
        a = (transform_motion_array(kin.rot_pb[i], kin.tr_pb[i], a)
             + chain.screws[i] * qdd[i] + motion_cross_array(v_b[i], sig_dq))
        a_b[i] = a
        a = transform_motion_array(chain.tip_rot[i], chain.tip_tr[i], a)
        a_t[i] = a
    return a_b, a_t


def net_force_pass(chain: ChainModel, v_b: np.ndarray, a_b: np.ndarray) -> np.ndarray:
    """Per-link net wrench ``M a + v x* (M v)`` (gravity folded into ``a_b``)."""
    mom = np.einsum("nij,nj->ni", chain.spatial_inertia, v_b)
    lin, ang = v_b[:, :3], v_b[:, 3:]
    bias = np.concatenate([
        np.cross(ang, mom[:, :3]),
        np.cross(ang, mom[:, 3:]) + np.cross(lin, mom[:, :3]),
    ], axis=1)
    return np.einsum("nij,nj->ni", chain.spatial_inertia, a_b) + bias


def force_pass(kin: ChainKinematics, net_forces: np.ndarray,
               tip_force: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Tip-to-base force recursion; returns link-base wrenches and joint torques."""
    chain = kin.chain
    n = chain.dof
    f_b = np.empty((n, 6))
    taus = np.empty(n)
    f = np.zeros(6) if tip_force is None else np.asarray(tip_force, float)
    for j in range(n - 1, -1, -1):
        f = transform_force_array(chain.tip_rot[j], chain.tip_tr[j], f) + net_forces[j]
        f_b[j] = f
        taus[j] = chain.screws[j] @ f
        f = transform_force_array(kin.rot_pb[j], kin.tr_pb[j], f)
    return f_b, taus


def body_gravity(kin: ChainKinematics, gravity: GravityVector) -> np.ndarray:
    """Gravity acceleration expressed in every link base frame, (n, 3)."""
    return np.einsum("nji,j->ni", kin.rot_wb, gravity.g)


# ---------------------------------------------------------------------------
# public spec-level operations

def forward_velocities(chain: ChainModel, js: JointState,
                       base_velocity: MotionVector | None = None) -> list[MotionVector]:
    """Spatial velocity of every link base frame, base velocity zero by default."""
    js.check(chain)
    kin = compute_kinematics(chain, js.q)
    base = None if base_velocity is None else base_velocity.data
    v_b, _ = velocity_pass(kin, js.dq, base)
    return [MotionVector(v_b[i], f"{chain.name}/B{i + 1}") for i in range(chain.dof)]


def backward_forces(chain: ChainModel, js_q: np.ndarray, net_forces: list[ForceVector] | np.ndarray,
                    tip_force: ForceVector | np.ndarray | None = None
                    ) -> tuple[list[ForceVector], np.ndarray]:
    """Backward recursion from per-link net wrenches and an optional tip wrench."""
    kin = compute_kinematics(chain, np.asarray(js_q, float))
    if isinstance(net_forces, (list, tuple)):
        net = np.array([f.data for f in net_forces])
    else:
        net = np.asarray(net_forces, float)
    tip = tip_force.data if isinstance(tip_force, ForceVector) else tip_force
    f_b, taus = force_pass(kin, net, tip)
    forces = [ForceVector(f_b[i], f"{chain.name}/B{i + 1}") for i in range(chain.dof)]
    return forces, taus


def jacobian(chain: ChainModel, q: np.ndarray,
             kin: ChainKinematics | None = None) -> np.ndarray:
    """6xN matrix mapping joint rates to the tip-frame spatial velocity."""
    kin = kin or compute_kinematics(chain, q)
    n = chain.dof
    cols = np.empty((n, 6))
    # accumulate the transform from B_i to the tip frame, walking backwards
    rot = np.eye(3)
    tr = np.zeros(3)
    for i in range(n - 1, -1, -1):
        rot_i = chain.tip_rot[i] @ rot
        tr_i = chain.tip_tr[i] + chain.tip_rot[i] @ tr
        cols[i] = transform_motion_array(rot_i, tr_i, chain.screws[i])
        rot = kin.rot_pb[i] @ rot_i
        tr = kin.tr_pb[i] + kin.rot_pb[i] @ tr_i
    return cols.T


def world_jacobian(chain: ChainModel, kin: ChainKinematics) -> np.ndarray:
    """Jacobian rotated so tip velocities come out in base-frame axes."""
    j_tip = jacobian(chain, kin.q, kin)
    r = kin.rot_wt[-1]
    out = np.empty_like(j_tip)
    out[:3] = r @ j_tip[:3]
    out[3:] = r @ j_tip[3:]
    return out


def pseudo_inverse(j: np.ndarray, min_singular: float = 1e-8) -> np.ndarray:
    """Moore-Penrose inverse; raises ``SingularJacobianError`` near rank loss."""
    u, s, vt = np.linalg.svd(j, full_matrices=False)
    if s.min() < min_singular * max(1.0, s.max()):
        raise SingularJacobianError(
            f"smallest singular value {s.min():.3e}; use dls_inverse instead")
    return (vt.T / s) @ u.T


def dls_inverse(j: np.ndarray, lam: float) -> np.ndarray:
    """Damped least-squares inverse ``(J^T J + lam I)^-1 J^T``; total for lam > 0."""
    if lam < 0.0:
        raise ValueError("damping must be non-negative")
    jt = j.T
    n = jt.shape[0]
    return np.linalg.solve(jt @ j + lam * np.eye(n), jt)


# ---------------------------------------------------------------------------
# whole-chain dynamics

def _world_com(chain: ChainModel, kin: ChainKinematics) -> np.ndarray:
    com_local = chain.phi[:, 1:4] / chain.phi[:, :1]
    return kin.pos_wb + np.einsum("nij,nj->ni", kin.rot_wb, com_local)


def potential_energy(chain: ChainModel, q: np.ndarray,
                     gravity: GravityVector | None = None) -> float:
    """Gravitational potential energy, zero at the base-frame origin height."""
    gravity = gravity or GravityVector()
    kin = compute_kinematics(chain, q)
    return float(-np.sum(chain.phi[:, 0] * (_world_com(chain, kin) @ gravity.g)))


def kinetic_energy(chain: ChainModel, kin: ChainKinematics, dq: np.ndarray) -> float:
    v_b, _ = velocity_pass(kin, dq)
    return 0.5 * float(np.einsum("ni,nij,nj->", v_b, chain.spatial_inertia, v_b)
                       + chain.rotor_inertia @ (dq * dq))


def inverse_dynamics(chain: ChainModel, q: np.ndarray, dq: np.ndarray, qdd: np.ndarray,
                     gravity: GravityVector | None = None,
                     tip_force: np.ndarray | None = None,
                     kin: ChainKinematics | None = None) -> np.ndarray:
    """Joint torques realizing ``qdd`` at state ``(q, dq)`` under gravity and a
    tip wrench transmitted onward through the tip frame."""
    gravity = gravity or GravityVector()
    kin = kin or compute_kinematics(chain, q)
    v_b, _ = velocity_pass(kin, dq)
    base_acc = np.concatenate([-gravity.g, np.zeros(3)])
    a_b, _ = acceleration_pass(kin, v_b, dq, qdd, base_acc)
    net = net_force_pass(chain, v_b, a_b)
    _, taus = force_pass(kin, net, tip_force)
    return taus + chain.rotor_inertia * qdd


def mass_matrix(chain: ChainModel, q: np.ndarray,
                kin: ChainKinematics | None = None) -> np.ndarray:
    """Joint-space mass matrix by composite-rigid-body accumulation."""
    kin = kin or compute_kinematics(chain, q)
    n = chain.dof
    ic = chain.spatial_inertia.copy()

    # 6x6 force transform from B_{i} coordinates into B_{i-1} coordinates
    def u_between(i):
        rot = chain.tip_rot[i - 1] @ kin.rot_pb[i]
        tr = chain.tip_tr[i - 1] + chain.tip_rot[i - 1] @ kin.tr_pb[i]
        u = np.zeros((6, 6))
        u[:3, :3] = rot
        u[3:, 3:] = rot
        u[3:, :3] = skew(tr) @ rot
        return u

    m = np.zeros((n, n))
    us = [None] + [u_between(i) for i in range(1, n)]
    for i in range(n - 1, 0, -1):
        ic[i - 1] += us[i] @ ic[i] @ us[i].T
    for i in range(n):
        f = ic[i] @ chain.screws[i]
        m[i, i] = chain.screws[i] @ f
        for j in range(i - 1, -1, -1):
            f = us[j + 1] @ f
            m[j, i] = m[i, j] = chain.screws[j] @ f
    return m + np.diag(chain.rotor_inertia)


def bias_torques(chain: ChainModel, q: np.ndarray, dq: np.ndarray,
                 gravity: GravityVector | None = None,
                 kin: ChainKinematics | None = None) -> np.ndarray:
    """Coriolis/centrifugal plus gravity torques (``qdd = 0``, no tip load)."""
    return inverse_dynamics(chain, q, dq, np.zeros_like(q), gravity, None, kin)

"""Rigid-body spatial dynamics in body coordinates.

Covers the Newton-Euler wrench of a single body, its linear-in-parameter
regressor over the 10-vector ``phi = (m, h, vech(I))``, the bijection
between ``phi`` and the 4x4 symmetric inertia image ``L``, and the
adaptation step that evolves an estimate ``L_hat`` directly on the
symmetric-positive-definite matrices so physical consistency is preserved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spatial import ForceVector, MotionVector, skew, skew_many

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class GravityVector:
    """Gravitational acceleration, default pointing along -z."""

    g: np.ndarray = None

    def __post_init__(self):
        g = DEFAULT_GRAVITY if self.g is None else np.asarray(self.g, dtype=float)
        if g.shape != (3,):
            raise ValueError(f"gravity must be shape (3,), got {g.shape}")
        object.__setattr__(self, "g", g)


@dataclass(frozen=True)
class InertialParams:
    """Mass, first moment ``h = m * c`` and rotational inertia about the body frame."""

    mass: float
    first_moment: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.first_moment, dtype=float)
        inertia = np.asarray(self.inertia, dtype=float)
        if h.shape != (3,) or inertia.shape != (3, 3):
            raise ValueError("first_moment must be (3,), inertia (3,3)")
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if np.abs(inertia - inertia.T).max() > 1e-9:
            raise ValueError("inertia matrix must be symmetric")
        object.__setattr__(self, "first_moment", h)
        object.__setattr__(self, "inertia", 0.5 * (inertia + inertia.T))

    @property
    def phi(self) -> np.ndarray:
        """10-vector (m, hx, hy, hz, Ixx, Ixy, Ixz, Iyy, Iyz, Izz)."""
        i = self.inertia
        return np.array([self.mass, *self.first_moment,
                         i[0, 0], i[0, 1], i[0, 2], i[1, 1], i[1, 2], i[2, 2]])

    @staticmethod
    def from_phi(phi: np.ndarray) -> "InertialParams":
        phi = np.asarray(phi, dtype=float)
        ixx, ixy, ixz, iyy, iyz, izz = phi[4:]
        inertia = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
        return InertialParams(float(phi[0]), phi[1:4], inertia)

    def spatial_mass_matrix(self) -> np.ndarray:
        """6x6 spatial inertia ``[[m 1, -hx], [hx, I]]`` (linear-first layout)."""
        hx = skew(self.first_moment)
        m = np.zeros((6, 6))
        m[:3, :3] = self.mass * np.eye(3)
        m[:3, 3:] = -hx
        m[3:, :3] = hx
        m[3:, 3:] = self.inertia
        return m


def _inertia_stack(w: np.ndarray) -> np.ndarray:
    """K(w) with ``K(w) @ vech(I) = I @ w`` for symmetric I (vech upper-triangle order)."""
    wx, wy, wz = w
    return np.array([
        [wx, wy, wz, 0.0, 0.0, 0.0],
        [0.0, wx, 0.0, wy, wz, 0.0],
        [0.0, 0.0, wx, 0.0, wy, wz],
    ])


def net_spatial_force(params: InertialParams, v: MotionVector, a: np.ndarray,
                      gravity: GravityVector | None = None) -> ForceVector:
    """Net wrench ``M a + C(w) v + G`` a body must receive to follow ``(v, a)``.

    ``a`` is the componentwise time derivative of the body-frame velocity
    coordinates and ``gravity`` the gravitational acceleration expressed in
    the body frame.
    """
    gravity = gravity or GravityVector()
    m = params.spatial_mass_matrix()
    vel = v.data
    momentum = m @ vel
    lin, ang = vel[:3], vel[3:]
    bias = np.concatenate([
        np.cross(ang, momentum[:3]),
        np.cross(ang, momentum[3:]) + np.cross(lin, momentum[:3]),
    ])
    weight = np.concatenate([params.mass * gravity.g,
                             np.cross(params.first_moment, gravity.g)])
    return ForceVector(m @ np.asarray(a, dtype=float) + bias - weight, v.frame)


def regressor(v: MotionVector | np.ndarray, a: np.ndarray,
              gravity: GravityVector | None = None) -> np.ndarray:
    """6x10 matrix ``Y`` with ``Y @ phi`` equal to ``net_spatial_force`` for every phi."""
    gravity = gravity or GravityVector()
    vel = v.data if isinstance(v, MotionVector) else np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    lin, ang = vel[:3], vel[3:]
    dlin, dang = a[:3], a[3:]
    g = gravity.g

    wx = skew(ang)
    y = np.zeros((6, 10))
    y[:3, 0] = dlin + np.cross(ang, lin) - g
    y[:3, 1:4] = skew(dang) + wx @ wx
    y[3:, 1:4] = -skew(dlin - g) + skew(np.cross(lin, ang))
    y[3:, 4:] = _inertia_stack(dang) + wx @ _inertia_stack(ang)
    return y


def regressor_batch(vel: np.ndarray, acc: np.ndarray, grav: np.ndarray) -> np.ndarray:
    """Vectorized ``regressor`` over n bodies: (n,6), (n,6), (n,3) -> (n,6,10)."""
    lin, ang = vel[:, :3], vel[:, 3:]
    dlin, dang = acc[:, :3], acc[:, 3:]
    n = vel.shape[0]
    wx = skew_many(ang)
    y = np.zeros((n, 6, 10))
    y[:, :3, 0] = dlin + np.cross(ang, lin) - grav
    y[:, :3, 1:4] = skew_many(dang) + wx @ wx
    y[:, 3:, 1:4] = -skew_many(dlin - grav) + skew_many(np.cross(lin, ang))

    ks_dang = np.zeros((n, 3, 6))
    ks_ang = np.zeros((n, 3, 6))
    for k, w in ((ks_dang, dang), (ks_ang, ang)):
        k[:, 0, 0] = w[:, 0]; k[:, 0, 1] = w[:, 1]; k[:, 0, 2] = w[:, 2]
        k[:, 1, 1] = w[:, 0]; k[:, 1, 3] = w[:, 1]; k[:, 1, 4] = w[:, 2]
        k[:, 2, 2] = w[:, 0]; k[:, 2, 4] = w[:, 1]; k[:, 2, 5] = w[:, 2]
    y[:, 3:, 4:] = ks_dang + wx @ ks_ang
    return y


def phi_to_L(params: InertialParams) -> np.ndarray:
    """One-to-one map from the 10 inertial parameters to a 4x4 symmetric matrix."""
    i = params.inertia
    out = np.zeros((4, 4))
    out[:3, :3] = 0.5 * np.trace(i) * np.eye(3) - i
    out[:3, 3] = params.first_moment
    out[3, :3] = params.first_moment
    out[3, 3] = params.mass
    return out


def L_to_phi(l_matrix: np.ndarray) -> InertialParams:
    """Inverse of ``phi_to_L``; requires a symmetric input."""
    l_matrix = np.asarray(l_matrix, dtype=float)
    if l_matrix.shape != (4, 4):
        raise ValueError(f"L must be 4x4, got {l_matrix.shape}")
    if np.abs(l_matrix - l_matrix.T).max() > 1e-9:
        raise ValueError("L must be symmetric")
    sigma = l_matrix[:3, :3]
    inertia = np.trace(sigma) * np.eye(3) - sigma
    return InertialParams(float(l_matrix[3, 3]), l_matrix[:3, 3].copy(), inertia)


def phi_vector_to_L(phi: np.ndarray) -> np.ndarray:
    """Structural map applied to any 10-vector (no positivity requirement).

    Linear in its argument and symmetric by construction; used both for the
    parameter image itself and for mapping regressor-weighted error vectors
    into the symmetric-matrix space that drives adaptation.
    """
    phi = np.asarray(phi, dtype=float)
    ixx, ixy, ixz, iyy, iyz, izz = phi[4:]
    i = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    out = np.zeros((4, 4))
    out[:3, :3] = 0.5 * (ixx + iyy + izz) * np.eye(3) - i
    out[:3, 3] = phi[1:4]
    out[3, :3] = phi[1:4]
    out[3, 3] = phi[0]
    return out


def s_matrix(driving: np.ndarray) -> np.ndarray:
    """Symmetric matrix image of the adaptation driving signal ``Y^T (V_r - V)``."""
    return phi_vector_to_L(driving)


@dataclass(frozen=True)
class NalState:
    """Estimate ``L_hat`` evolved on symmetric positive definite matrices."""

    l_hat: np.ndarray
    gamma: float
    gamma0: float
    min_eig: float = 1e-8

    def __post_init__(self):
        l_hat = np.asarray(self.l_hat, dtype=float)
        if self.gamma <= 0.0 or self.gamma0 <= 0.0:
            raise ValueError("adaptation gains must be positive")
        if np.abs(l_hat - l_hat.T).max() > 1e-9:
            raise ValueError("L_hat must be symmetric")
        if np.linalg.eigvalsh(l_hat).min() <= 0.0:
            raise ValueError("L_hat must be positive definite")
        object.__setattr__(self, "l_hat", 0.5 * (l_hat + l_hat.T))


def nal_derivative(l_hat: np.ndarray, s: np.ndarray, gamma: float, gamma0: float) -> np.ndarray:
    return (l_hat @ (s - gamma0 * l_hat) @ l_hat) / gamma


def clamp_spd(mat: np.ndarray, min_eig: float) -> np.ndarray:
    """Eigenvalue clamp keeping a symmetric matrix at least ``min_eig``-definite."""
    w, v = np.linalg.eigh(mat)
    if w.min() >= min_eig:
        return mat
    return (v * np.maximum(w, min_eig)) @ v.T


def nal_step(state: NalState, s: np.ndarray, dt: float) -> NalState:
    """Explicit-Euler update of ``L_hat``; output symmetrized and kept definite."""
    s = np.asarray(s, dtype=float)
    l_new = state.l_hat + dt * nal_derivative(state.l_hat, s, state.gamma, state.gamma0)
    l_new = 0.5 * (l_new + l_new.T)
    l_new = clamp_spd(l_new, state.min_eig)
    return NalState(l_new, state.gamma, state.gamma0, state.min_eig)


def nal_step_batch(l_hat: np.ndarray, s: np.ndarray, gamma: float, gamma0: float,
                   dt: float, min_eig: float = 1e-8) -> np.ndarray:
    """Batched NAL update over (n, k, k) stacks; same arithmetic as ``nal_step``."""
    l_new = l_hat + (dt / gamma) * (l_hat @ (s - gamma0 * l_hat) @ l_hat)
    l_new = 0.5 * (l_new + np.swapaxes(l_new, -1, -2))
    w, v = np.linalg.eigh(l_new)
    if w.min() < min_eig:
        w = np.maximum(w, min_eig)
        l_new = (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)
    return l_new

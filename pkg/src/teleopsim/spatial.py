"""6-D spatial motion/force vectors in Plucker coordinates, frame transforms,
and the velocity-error/force-error power primitive.

Spatial vectors stack the linear part first: a motion vector is
``[v; w]`` (linear velocity, angular velocity) and a force vector is
``[f; n]`` (force, moment), both expressed in a named body frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Vec3 = np.ndarray  # shape (3,): position, velocity or axis, context-dependent


class FrameMismatchError(ValueError):
    """Raised when an operation mixes quantities from different frames."""


def skew(r) -> np.ndarray:
    """3x3 antisymmetric matrix such that ``skew(r) @ v == np.cross(r, v)``."""
    rx, ry, rz = np.asarray(r, dtype=float)
    return np.array([
        [0.0, -rz, ry],
        [rz, 0.0, -rx],
        [-ry, rx, 0.0],
    ])


def skew_many(r: np.ndarray) -> np.ndarray:
    """Batched ``skew``: maps an (n, 3) array to (n, 3, 3)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape[:-1] + (3, 3))
    out[..., 0, 1] = -r[..., 2]
    out[..., 0, 2] = r[..., 1]
    out[..., 1, 0] = r[..., 2]
    out[..., 1, 2] = -r[..., 0]
    out[..., 2, 0] = -r[..., 1]
    out[..., 2, 1] = r[..., 0]
    return out


def orthonormality_residual(rotation: np.ndarray) -> float:
    return float(np.abs(rotation.T @ rotation - np.eye(3)).max())


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Project onto SO(3) via the polar factor (nearest rotation)."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def check_rotation(rotation: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate (and if slightly drifted, repair) a rotation matrix."""
    rotation = np.asarray(rotation, dtype=float)
    if rotation.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
    if orthonormality_residual(rotation) > tol or abs(np.linalg.det(rotation) - 1.0) > tol:
        repaired = orthonormalize(rotation)
        # repair only mild drift; reject anything that is not a rotation
        if np.abs(repaired - rotation).max() > 1e-6:
            raise ValueError("matrix is not orthonormal with det +1")
        rotation = repaired
    return rotation


@dataclass(frozen=True)
class FrameTransform:
    """Rigid transform between frame ``parent`` {A} and frame ``child`` {B}.

    ``rotation`` is the matrix of child axes in parent coordinates and
    ``translation`` the vector from the parent origin to the child origin,
    expressed in the parent frame.  Frame labels are optional; when both
    sides carry a label, transform operations enforce it.
    """

    rotation: np.ndarray
    translation: np.ndarray
    parent: str | None = None
    child: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,):
            raise ValueError(f"translation must be shape (3,), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation has non-finite components")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity(parent=None, child=None) -> "FrameTransform":
        return FrameTransform(np.eye(3), np.zeros(3), parent, child)

    def compose(self, other: "FrameTransform") -> "FrameTransform":
        """Transform A->B composed with B->C, giving A->C."""
        if self.child is not None and other.parent is not None and self.child != other.parent:
            raise FrameMismatchError(
                f"cannot compose {self.parent}->{self.child} with {other.parent}->{other.child}")
        return FrameTransform(
            self.rotation @ other.rotation,
            self.translation + self.rotation @ other.translation,
            self.parent, other.child)

    def inverse(self) -> "FrameTransform":
        return FrameTransform(self.rotation.T, -(self.rotation.T @ self.translation),
                              self.child, self.parent)

    def apply_point(self, p: np.ndarray) -> np.ndarray:
        """Map a point given in the child frame into the parent frame."""
        return self.rotation @ np.asarray(p, dtype=float) + self.translation


@dataclass(frozen=True)
class MotionVector:
    """Spatial velocity ``[linear; angular]`` of a body, in frame ``frame``."""

    data: np.ndarray
    frame: str | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.shape != (6,):
            raise ValueError(f"motion vector must be shape (6,), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("motion vector has non-finite components")
        object.__setattr__(self, "data", d)

    @staticmethod
    def from_parts(linear, angular, frame=None) -> "MotionVector":
        return MotionVector(np.concatenate([np.asarray(linear, float), np.asarray(angular, float)]), frame)

    @staticmethod
    def zero(frame=None) -> "MotionVector":
        return MotionVector(np.zeros(6), frame)

    @property
    def linear(self) -> np.ndarray:
        return self.data[:3]

    @property
    def angular(self) -> np.ndarray:
        return self.data[3:]


@dataclass(frozen=True)
class ForceVector:
    """Spatial force ``[force; moment]`` applied to a body, in frame ``frame``."""

    data: np.ndarray
    frame: str | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.shape != (6,):
            raise ValueError(f"force vector must be shape (6,), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("force vector has non-finite components")
        object.__setattr__(self, "data", d)

    @staticmethod
    def from_parts(force, moment, frame=None) -> "ForceVector":
        return ForceVector(np.concatenate([np.asarray(force, float), np.asarray(moment, float)]), frame)

    @staticmethod
    def zero(frame=None) -> "ForceVector":
        return ForceVector(np.zeros(6), frame)

    @property
    def force(self) -> np.ndarray:
        return self.data[:3]

    @property
    def moment(self) -> np.ndarray:
        return self.data[3:]


def build_transform_matrix(t: FrameTransform) -> np.ndarray:
    """6x6 spatial transform ``U = [[R, 0], [skew(r) R, R]]`` for A->B.

    Motion vectors map child<-parent through ``U.T``, force vectors
    parent<-child through ``U``.
    """
    u = np.zeros((6, 6))
    u[:3, :3] = t.rotation
    u[3:, 3:] = t.rotation
    u[3:, :3] = skew(t.translation) @ t.rotation
    return u


def _check_frame(label, expected, kind: str):
    if label is not None and expected is not None and label != expected:
        raise FrameMismatchError(f"{kind} expressed in {label!r}, expected {expected!r}")


def transform_motion_array(rotation: np.ndarray, translation: np.ndarray,
                           v: np.ndarray) -> np.ndarray:
    """``U.T @ v`` without forming U: motion vector from parent into child frame."""
    lin, ang = v[:3], v[3:]
    rt = rotation.T
    return np.concatenate([rt @ (lin + np.cross(ang, translation)), rt @ ang])


def transform_force_array(rotation: np.ndarray, translation: np.ndarray,
                          f: np.ndarray) -> np.ndarray:
    """``U @ f`` without forming U: force vector from child into parent frame."""
    force, moment = f[:3], f[3:]
    fp = rotation @ force
    return np.concatenate([fp, np.cross(translation, fp) + rotation @ moment])


def transform_motion(t: FrameTransform, v: MotionVector) -> MotionVector:
    """Re-express a motion vector from the parent frame of ``t`` in its child frame."""
    _check_frame(v.frame, t.parent, "motion vector")
    return MotionVector(transform_motion_array(t.rotation, t.translation, v.data), t.child)


def transform_force(t: FrameTransform, f: ForceVector) -> ForceVector:
    """Re-express a force vector from the child frame of ``t`` in its parent frame."""
    _check_frame(f.frame, t.child, "force vector")
    return ForceVector(transform_force_array(t.rotation, t.translation, f.data), t.parent)


def vpf(v_r: MotionVector, v: MotionVector, f_r: ForceVector, f: ForceVector) -> float:
    """Virtual power flow ``(v_r - v)^T (f_r - f)`` at one cutting frame.

    All four vectors must live in the same frame; the result is the power
    (W) carried by the velocity/force tracking errors at that frame.
    """
    frames = {x.frame for x in (v_r, v, f_r, f) if x.frame is not None}
    if len(frames) > 1:
        raise FrameMismatchError(f"vpf operands span frames {sorted(frames)}")
    return float((v_r.data - v.data) @ (f_r.data - f.data))


def motion_cross_array(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Spatial cross product of two motion vectors (linear-first layout)."""
    lin1, ang1 = v1[:3], v1[3:]
    lin2, ang2 = v2[:3], v2[3:]
    return np.concatenate([np.cross(ang1, lin2) + np.cross(lin1, ang2),
                           np.cross(ang1, ang2)])


def force_cross_array(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Spatial cross of a motion vector with a force vector (bias-force operator)."""
    lin, ang = v[:3], v[3:]
    force, moment = f[:3], f[3:]
    return np.concatenate([np.cross(ang, force),
                           np.cross(ang, moment) + np.cross(lin, force)])

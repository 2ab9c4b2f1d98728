"""Surrogate-side control pieces: damped-inverse kinematics at the wrist,
the Kelvin-Voigt contact environment, tool force composition and the
piston-force output of the gear-driven actuators.

The upstream links of the surrogate reuse the chain-wide control laws from
:mod:`teleopsim.master_control`; this module adds what is specific to the
contact side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spatial import transform_force_array


@dataclass
class EnvironmentModel:
    """Plane contact with mass-damper-spring reaction along selected axes.

    The plane passes through ``point`` with outward unit ``normal``;
    penetration is the distance the tool has crossed below the surface.
    The selection matrix restricts the reaction to the contact normal
    (translation only) unless a full matrix is supplied.
    """

    normal: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stiffness: float = 1e5
    damping: float = 1e3
    mass: float = 0.0
    enabled: bool = True
    selection: np.ndarray | None = None

    def __post_init__(self):
        self.normal = np.asarray(self.normal, float)
        self.normal = self.normal / np.linalg.norm(self.normal)
        self.point = np.asarray(self.point, float)
        if min(self.stiffness, self.damping, self.mass) < 0.0:
            raise ValueError("environment coefficients must be non-negative")
        if self.selection is None:
            nc = np.zeros((6, 6))
            nc[:3, :3] = np.outer(self.normal, self.normal)
            self.selection = nc
        else:
            self.selection = np.asarray(self.selection, float)

    def penetration(self, tip_position: np.ndarray) -> float:
        """Depth of the tool below the surface; zero when not in contact."""
        if not self.enabled:
            return 0.0
        return max(0.0, -float(self.normal @ (np.asarray(tip_position, float) - self.point)))

    def deformation(self, tip_position: np.ndarray) -> np.ndarray:
        """6-vector ``x_e``: surface displacement into the material (so the
        spring wrench acts along the tool's pushing direction); zero out of
        contact."""
        x = np.zeros(6)
        x[:3] = -self.penetration(tip_position) * self.normal
        return x


def environment_force(env: EnvironmentModel, tip_position: np.ndarray,
                      v_tip: np.ndarray, a_tip: np.ndarray) -> tuple[np.ndarray, bool]:
    """Contact wrench the tool exerts on the environment (task frame).

    ``f_e = M_e a + D_e v + K_e x_e`` on the selected axes; zero out of
    contact.  Points into the material while the tool presses; the reaction
    on the tool is its negation.  Returns the 6-wrench and the contact flag.
    """
    pen = env.penetration(tip_position)
    if pen <= 0.0:
        return np.zeros(6), False
    x_e = env.deformation(tip_position)
    raw = env.mass * np.asarray(a_tip, float) + env.damping * np.asarray(v_tip, float)
    raw = raw + env.stiffness * x_e
    return env.selection @ raw, True


def desired_environment_force(env: EnvironmentModel, tip_position: np.ndarray,
                              v_tip: np.ndarray, a_required_tip: np.ndarray) -> np.ndarray:
    """Contact feedforward: same law with the required acceleration substituted."""
    f, _ = environment_force(env, tip_position, v_tip, a_required_tip)
    return f


def tool_required_force(net_required: np.ndarray, tool_to_tip_rotation: np.ndarray,
                        tool_to_tip_translation: np.ndarray,
                        tip_required: np.ndarray) -> np.ndarray:
    """Tool wrench command: net required wrench plus the tip feedforward pulled
    back into the tool frame."""
    return np.asarray(net_required, float) + transform_force_array(
        tool_to_tip_rotation, tool_to_tip_translation, np.asarray(tip_required, float))


def piston_net_required_force(piston_mass: float, piston_damping: float,
                              gear_ratio: float, dq_r: float, qdd_r: float) -> float:
    """Net required force of the piston body along its axis.

    The piston translates at ``gear_ratio`` times the joint rate, so its
    required force is its mass times the required linear acceleration plus
    viscous drag; zero when the piston body is not modeled.
    """
    return piston_mass * gear_ratio * qdd_r + piston_damping * gear_ratio * dq_r


def required_piston_force(tool_force: np.ndarray | float, screw: np.ndarray | None,
                          piston_net_force: float, gear_ratio: float) -> float:
    """Actuator force ``f_c = (1/r_w) sigma^T F_r + sigma^T F*_p``.

    ``tool_force`` may be the joint-level torque (scalar) or the tool wrench
    with its screw; the second term compensates the piston mechanism itself.
    """
    if gear_ratio <= 0.0:
        raise ValueError(f"gear ratio must be positive, got {gear_ratio}")
    if screw is not None:
        torque = float(np.asarray(screw, float) @ np.asarray(tool_force, float))
    else:
        torque = float(tool_force)
    return torque / gear_ratio + piston_net_force

"""Online function approximation and force-sensorless interaction estimation.

Gaussian RBF networks adapt their output weights and bias from the velocity
tracking error (with leakage so weights stay bounded), and a generalized
momentum observer reconstructs the external tip wrench from joint signals
alone, converging first-order to the true wrench.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import (ChainKinematics, ChainModel, JointState, compute_kinematics,
                    dls_inverse, jacobian, acceleration_pass, bias_torques,
                    net_force_pass, force_pass, velocity_pass)
from .rigid_body import GravityVector
from .spatial import ForceVector


@dataclass(frozen=True)
class EstimatorGains:
    """Positive adaptation gains: weights (gain, leak) and bias (gain, leak)."""

    weight_gain: float = 10.0
    weight_leak: float = 1e-3
    bias_gain: float = 100.0
    bias_leak: float = 1e-3

    def __post_init__(self):
        if min(self.weight_gain, self.weight_leak, self.bias_gain, self.bias_leak) <= 0.0:
            raise ValueError("all estimator gains must be positive")


@dataclass
class RbfNetwork:
    """Gaussian-basis network ``f(x) = W^T psi(x) + eps``."""

    centers: np.ndarray   # (k, d)
    widths: np.ndarray    # (k,)
    weights: np.ndarray   # (k, m)
    bias: np.ndarray      # (m,)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, float))
        self.widths = np.asarray(self.widths, float)
        self.weights = np.asarray(self.weights, float)
        self.bias = np.asarray(self.bias, float)
        if np.any(self.widths <= 0.0):
            raise ValueError("widths must be positive")
        if self.weights.shape[0] != self.centers.shape[0]:
            raise ValueError("weights rows must match number of centers")

    @staticmethod
    def zeros(centers: np.ndarray, widths: np.ndarray, output_dim: int) -> "RbfNetwork":
        centers = np.atleast_2d(np.asarray(centers, float))
        return RbfNetwork(centers, widths,
                          np.zeros((centers.shape[0], output_dim)), np.zeros(output_dim))


def grid_centers(lower: np.ndarray, upper: np.ndarray,
                 points_per_dim: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Uniform tensor grid of centers over a box; widths equal the grid spacing."""
    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    spacing = float(np.mean((upper - lower) / max(points_per_dim - 1, 1)))
    widths = np.full(centers.shape[0], spacing)
    return centers, widths


def rbf_features(net: RbfNetwork, x: np.ndarray) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, float))
    d2 = np.sum((net.centers - x) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * net.widths ** 2))


def rbf_eval(net: RbfNetwork, x: np.ndarray) -> np.ndarray:
    """Network output ``W^T psi(x) + eps`` for one input vector."""
    return net.weights.T @ rbf_features(net, x) + net.bias


def adapt_weights(net: RbfNetwork, x: np.ndarray, velocity_error: np.ndarray,
                  gains: EstimatorGains, dt: float) -> RbfNetwork:
    """One explicit-Euler adaptation step driven by the velocity tracking error.

    Weights integrate the outer product of the basis activations with the
    error; both weights and bias leak toward zero so the estimate stays
    bounded when the error signal is bounded.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    err = np.atleast_1d(np.asarray(velocity_error, float))
    psi = rbf_features(net, x)
    w_dot = gains.weight_gain * (np.outer(psi, err) - gains.weight_leak * net.weights)
    b_dot = gains.bias_gain * (err - gains.bias_leak * net.bias)
    return RbfNetwork(net.centers, net.widths,
                      net.weights + dt * w_dot, net.bias + dt * b_dot)


# ---------------------------------------------------------------------------
# batched variant used by the per-link controllers

@dataclass
class RbfBank:
    """One RBF network per link, sharing a center layout, updated in batch."""

    centers: np.ndarray   # (k, d)
    widths: np.ndarray    # (k,)
    weights: np.ndarray   # (n, k, m)
    bias: np.ndarray      # (n, m)
    gains: EstimatorGains

    @staticmethod
    def create(n_links: int, centers, widths, output_dim: int,
               gains: EstimatorGains) -> "RbfBank":
        centers = np.atleast_2d(np.asarray(centers, float))
        return RbfBank(centers, np.asarray(widths, float),
                       np.zeros((n_links, centers.shape[0], output_dim)),
                       np.zeros((n_links, output_dim)), gains)

    def features(self, x: np.ndarray) -> np.ndarray:
        """(n, d) inputs -> (n, k) activations."""
        x = np.atleast_2d(np.asarray(x, float))
        d2 = np.sum((x[:, None, :] - self.centers[None, :, :]) ** 2, axis=2)
        return np.exp(-d2 / (2.0 * self.widths ** 2))

    def eval_and_adapt(self, x: np.ndarray, err: np.ndarray, dt: float) -> np.ndarray:
        """Evaluate every link network, then adapt in place; returns (n, m)."""
        psi = self.features(x)
        out = np.einsum("nk,nkm->nm", psi, self.weights) + self.bias
        g = self.gains
        self.weights += dt * g.weight_gain * (
            psi[:, :, None] * err[:, None, :] - g.weight_leak * self.weights)
        self.bias += dt * g.bias_gain * (err - g.bias_leak * self.bias)
        return out


# ---------------------------------------------------------------------------
# generalized-momentum interaction force observer

def _momentum(chain: ChainModel, kin: ChainKinematics, dq: np.ndarray) -> np.ndarray:
    """Joint-space generalized momentum ``M(q) dq`` in one recursion pass."""
    zeros = np.zeros_like(dq)
    a_b, _ = acceleration_pass(kin, np.zeros((chain.dof, 6)), zeros, dq)
    net = np.einsum("nij,nj->ni", chain.spatial_inertia, a_b)
    _, taus = force_pass(kin, net)
    return taus + chain.rotor_inertia * dq


@dataclass
class ForceObserverState:
    """Running state of the momentum-residual observer for one chain."""

    gain: float
    joint_damping: np.ndarray | None = None
    fd_step: float = 1e-6
    dls_damping: float = 1e-6
    integral: np.ndarray | None = None
    momentum0: np.ndarray | None = None
    residual: np.ndarray | None = None
    estimate: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        if self.gain <= 0.0:
            raise ValueError("observer gain must be positive")


def observe_interaction_force(state: ForceObserverState, chain: ChainModel,
                              js: JointState, applied_torques: np.ndarray,
                              dt: float, gravity: GravityVector | None = None,
                              kin: ChainKinematics | None = None) -> ForceVector:
    """Update the momentum observer and return the estimated external tip wrench.

    The residual ``r`` tracks the external joint torque with dynamics
    ``r_dot = gain * (tau_ext - r)``; the tip wrench is recovered through a
    damped inverse of the Jacobian transpose.  The estimate is the wrench
    applied *to* the chain at its tip, expressed in the tip frame.
    """
    gravity = gravity or GravityVector()
    kin = kin or compute_kinematics(chain, js.q)
    n = chain.dof
    q, dq = js.q, js.dq
    tau = np.asarray(applied_torques, float)

    p_now = _momentum(chain, kin, dq)
    if state.integral is None:
        state.integral = np.zeros(n)
        state.momentum0 = p_now.copy()
        state.residual = np.zeros(n)

    # beta = C dq + g - Mdot dq, with Mdot dq from a directional difference of
    # the momentum map along the motion
    bias_v = bias_torques(chain, q, dq, gravity, kin)
    if state.joint_damping is not None:
        bias_v = bias_v + state.joint_damping * dq
    speed = float(np.linalg.norm(dq))
    if speed > 1e-12:
        h = state.fd_step / max(speed, 1.0)
        kin_h = compute_kinematics(chain, q + h * dq)
        mdot_dq = (_momentum(chain, kin_h, dq) - p_now) / h
    else:
        mdot_dq = np.zeros(n)

    state.integral += dt * (tau - bias_v + mdot_dq + state.residual)
    state.residual = state.gain * (p_now - state.integral - state.momentum0)

    j = jacobian(chain, q, kin)
    wrench = dls_inverse(j.T, state.dls_damping) @ state.residual
    state.estimate = wrench
    return ForceVector(wrench, f"{chain.name}/T{n}")

"""Desired-velocity synthesis for both teleoperation sides with motion/force
scaling, first-order signal filters, and the one-way delay channel.

Motion scaling multiplies translational quantities only; force scaling is a
full-wrench scalar.  Only filtered signals cross the channel; each side
combines the (possibly delayed) remote filtered signals with its own raw
pose and its own filtered force estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import Pose, pose_error, quat_normalize


@dataclass(frozen=True)
class ScalingConfig:
    """Teleoperation gains: motion scale, force scale, position gain, force
    reflection gain, and the filter constant."""

    kappa_p: float = 1.0
    kappa_f: float = 1.0
    lam: float = 12.0
    a_gain: float = 80e-5
    filter_c: float = 35.0

    def __post_init__(self):
        if self.kappa_p == 0.0 or self.kappa_f == 0.0:
            raise ValueError("scaling factors must be invertible")
        if self.lam <= 0.0 or self.a_gain < 0.0 or self.filter_c <= 0.0:
            raise ValueError("lam and filter_c must be positive, a_gain non-negative")

    @property
    def kappa_p_matrix(self) -> np.ndarray:
        return np.diag([self.kappa_p] * 3 + [1.0] * 3)

    @property
    def kappa_f_matrix(self) -> np.ndarray:
        return self.kappa_f * np.eye(6)

    @property
    def lam_matrix(self) -> np.ndarray:
        return self.lam * np.eye(6)

    @property
    def a_matrix(self) -> np.ndarray:
        return self.a_gain * np.eye(6)

    def scale_motion(self, v: np.ndarray) -> np.ndarray:
        out = np.asarray(v, float).copy()
        out[:3] *= self.kappa_p
        return out

    def unscale_motion(self, v: np.ndarray) -> np.ndarray:
        out = np.asarray(v, float).copy()
        out[:3] /= self.kappa_p
        return out


# ---------------------------------------------------------------------------
# first-order filters (exact discretization)

@dataclass
class FilterState:
    """State of the first-order lag ``y_dot + c y = c u``."""

    value: np.ndarray
    c: float

    def __post_init__(self):
        self.value = np.atleast_1d(np.asarray(self.value, float))
        if self.c <= 0.0:
            raise ValueError("filter constant must be positive")


def filter_step(fs: FilterState, u: np.ndarray, dt: float) -> FilterState:
    """Advance the filter by ``dt`` using the exact exponential discretization."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u = np.atleast_1d(np.asarray(u, float))
    decay = np.exp(-fs.c * dt)
    return FilterState(u + (fs.value - u) * decay, fs.c)


@dataclass
class PoseFilter:
    """Componentwise filtered pose; quaternions are hemisphere-aligned before
    filtering and renormalized after."""

    position: FilterState
    orientation: FilterState

    @staticmethod
    def from_pose(pose: Pose, c: float) -> "PoseFilter":
        return PoseFilter(FilterState(pose.position, c), FilterState(pose.orientation, c))

    def step(self, pose: Pose, dt: float) -> "PoseFilter":
        q = pose.orientation
        if q @ self.orientation.value < 0.0:
            q = -q
        return PoseFilter(filter_step(self.position, pose.position, dt),
                          filter_step(self.orientation, q, dt))

    @property
    def pose(self) -> Pose:
        return Pose(self.position.value.copy(), quat_normalize(self.orientation.value))


# ---------------------------------------------------------------------------
# exchanged signal bundle

@dataclass
class SideSignals:
    """Velocity, pose and force estimate of one side, in its task frame."""

    velocity: np.ndarray
    pose: Pose
    force: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.velocity, self.pose.position,
                               self.pose.orientation, self.force])

    @staticmethod
    def from_array(arr: np.ndarray) -> "SideSignals":
        arr = np.asarray(arr, float)
        return SideSignals(arr[:6].copy(),
                           Pose(arr[6:9].copy(), quat_normalize(arr[9:13])),
                           arr[13:19].copy())

    @staticmethod
    def zero() -> "SideSignals":
        return SideSignals(np.zeros(6), Pose.identity(), np.zeros(6))


@dataclass
class FilteredSide:
    """Own-side filters applied to the raw signals before they cross the channel."""

    velocity: FilterState
    pose: PoseFilter
    force: FilterState

    @staticmethod
    def create(initial: SideSignals, c: float) -> "FilteredSide":
        return FilteredSide(FilterState(initial.velocity, c),
                            PoseFilter.from_pose(initial.pose, c),
                            FilterState(initial.force, c))

    def step(self, raw: SideSignals, dt: float) -> SideSignals:
        self.velocity = filter_step(self.velocity, raw.velocity, dt)
        self.pose = self.pose.step(raw.pose, dt)
        self.force = filter_step(self.force, raw.force, dt)
        return self.signals

    @property
    def signals(self) -> SideSignals:
        return SideSignals(self.velocity.value.copy(), self.pose.pose, self.force.value.copy())


# ---------------------------------------------------------------------------
# delay channel

class DelayLine:
    """One-way channel carrying timestamped samples with zero-order hold.

    Modes: ``none`` (passthrough), ``fixed`` (constant one-way delay) and
    ``varying`` (per-sample delay drawn uniformly from ``[0, max_delay]``
    using the seeded generator).  Pushes must arrive at a uniform cadence;
    sampling never returns data newer than the delayed query time, and holds
    the oldest sample when the query precedes the buffer start.
    """

    def __init__(self, mode: str = "none", delay: float = 0.0,
                 max_delay: float = 0.0, seed: int = 0):
        if mode not in ("none", "fixed", "varying"):
            raise ValueError(f"unknown delay mode {mode!r}")
        if delay < 0.0 or max_delay < 0.0:
            raise ValueError("delays must be non-negative")
        self.mode = mode
        self.delay = float(delay)
        self.max_delay = float(max_delay if mode == "varying" else delay)
        self._rng = np.random.default_rng(seed)
        self._times: list[float] = []
        self._values: list[np.ndarray] = []
        self._t0 = None
        self._period = None

    def push(self, t: float, value: np.ndarray):
        if self._times and t <= self._times[-1]:
            raise ValueError("timestamps must be strictly increasing")
        if self._t0 is None:
            self._t0 = t
        elif self._period is None:
            self._period = t - self._t0
        self._times.append(t)
        self._values.append(np.asarray(value, float).copy())

    def current_delay(self) -> float:
        if self.mode == "none":
            return 0.0
        if self.mode == "fixed":
            return self.delay
        return float(self._rng.uniform(0.0, self.max_delay))

    def sample(self, t_now: float) -> np.ndarray:
        if not self._values:
            raise ValueError("channel sampled before any push")
        t_query = t_now - self.current_delay()
        if self._period is None:
            idx = 0 if t_query < self._times[-1] else len(self._values) - 1
        else:
            idx = int(np.floor((t_query - self._t0) / self._period + 1e-9))
        idx = min(max(idx, 0), len(self._values) - 1)
        return self._values[idx]


def channel_push(dl: DelayLine, t: float, value: np.ndarray):
    dl.push(t, value)


def channel_sample(dl: DelayLine, t_now: float) -> np.ndarray:
    return dl.sample(t_now)


# ---------------------------------------------------------------------------
# desired velocities

def desired_master_velocity(remote: SideSignals, master_pose: Pose,
                            master_force_filtered: np.ndarray,
                            cfg: ScalingConfig) -> np.ndarray:
    """Master-side desired velocity from (possibly delayed) surrogate signals.

    Combines the filtered surrogate velocity, the scaled pose mismatch and
    the force-reflection term, then unscales back to master motion range.
    """
    err = -pose_error(master_pose, remote.pose, cfg.kappa_p)  # X_s - kp X_m
    inner = (remote.velocity + cfg.lam_matrix @ err
             - cfg.a_matrix @ (remote.force
                               + (cfg.kappa_f_matrix - cfg.kappa_p_matrix) @ master_force_filtered))
    return cfg.unscale_motion(inner)


def desired_surrogate_velocity(remote: SideSignals, surrogate_pose: Pose,
                               cfg: ScalingConfig) -> np.ndarray:
    """Surrogate-side desired velocity from (possibly delayed) master signals."""
    err = pose_error(remote.pose, surrogate_pose, cfg.kappa_p)  # kp X_m - X_s
    return (cfg.scale_motion(remote.velocity) + cfg.lam_matrix @ err
            - cfg.a_matrix @ (cfg.kappa_f_matrix @ remote.force))

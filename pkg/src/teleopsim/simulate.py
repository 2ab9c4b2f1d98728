"""Deterministic closed-loop stepper for the two-sided teleoperation world.

One 1 ms cycle: operator wrench, master forward dynamics (semi-implicit
Euler), interaction-force observers, signal filters, channel exchange,
desired velocities, both chain controllers, surrogate forward dynamics,
environment update, trace logging.  Identical configuration and seed give
bit-identical traces.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .chain import (ChainModel, JointState, Pose, bias_torques,
                    compute_kinematics, jacobian, mass_matrix, pose_error,
                    quat_conjugate, quat_from_matrix, quat_multiply,
                    velocity_pass)
from .coupling import (DelayLine, FilteredSide, ScalingConfig, SideSignals,
                       desired_master_velocity, desired_surrogate_velocity,
                       filter_step, FilterState)
from .estimation import ForceObserverState, observe_interaction_force
from .master_control import (BarrierViolationError, ChainVdcController,
                             required_velocity, rotate_twist)
from .rigid_body import GravityVector
from .scenario import ScenarioConfig, SideConfig
from .surrogate_control import (EnvironmentModel, desired_environment_force,
                                environment_force, piston_net_required_force,
                                required_piston_force)


class SimulationDivergedError(RuntimeError):
    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"simulation diverged at step {step}: {message}")


# ---------------------------------------------------------------------------
# trace log

class TraceLog:
    """Append-only uniform-timebase log with named columns."""

    def __init__(self, columns: list[str], capacity: int):
        self.columns = list(columns)
        self._index = {name: i for i, name in enumerate(self.columns)}
        self._data = np.zeros((capacity, len(self.columns)))
        self.rows = 0

    def append(self, values: np.ndarray):
        if self.rows >= self._data.shape[0]:
            self._data = np.vstack([self._data, np.zeros_like(self._data)])
        self._data[self.rows] = values
        self.rows += 1

    @property
    def data(self) -> np.ndarray:
        return self._data[:self.rows]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self._index[name]]

    def block(self, prefix: str, n: int) -> np.ndarray:
        idx = [self._index[f"{prefix}{i}"] for i in range(n)]
        return self.data[:, idx]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.data:
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")

    @staticmethod
    def from_csv(path) -> "TraceLog":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
        log = TraceLog(header, body.shape[0])
        log._data = body
        log.rows = body.shape[0]
        return log


def trace_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _trace_columns(n_m: int, n_s: int) -> list[str]:
    cols = ["t"]
    cols += [f"q_m{i}" for i in range(n_m)] + [f"dq_m{i}" for i in range(n_m)]
    cols += [f"q_s{i}" for i in range(n_s)] + [f"dq_s{i}" for i in range(n_s)]
    cols += [f"x_m{i}" for i in range(7)] + [f"x_s{i}" for i in range(7)]
    cols += [f"v_m{i}" for i in range(6)] + [f"v_s{i}" for i in range(6)]
    cols += [f"fm_hat{i}" for i in range(6)] + [f"fs_hat{i}" for i in range(6)]
    cols += [f"fm_true{i}" for i in range(6)] + [f"fs_true{i}" for i in range(6)]
    cols += [f"rho_m{i}" for i in range(6)] + [f"rho_s{i}" for i in range(6)]
    cols += [f"rho_v{i}" for i in range(6)] + [f"rho_p{i}" for i in range(6)]
    cols += ["p_t7", "p_t"]
    cols += [f"bar_m{i}" for i in range(n_m)] + [f"bar_s{i}" for i in range(n_s)]
    cols += ["pen", "f_cr", "kappa_p", "kappa_f", "cn0", "cn1", "cn2"]
    return cols


# ---------------------------------------------------------------------------
# operator model

class OperatorModel:
    """Hand impedance pulling the master tip along a splined reference."""

    def __init__(self, cfg, start_pose: Pose):
        wp = np.asarray(cfg.waypoints, float)
        self._t_end = wp[-1, 0]
        self._spline = CubicSpline(wp[:, 0], wp[:, 1:4], axis=0,
                                   bc_type=((1, np.zeros(3)), (1, np.zeros(3))))
        self._p0 = start_pose.position.copy()
        self._q_ref = start_pose.orientation.copy()
        self.cfg = cfg

    def reference(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        tc = min(max(t, 0.0), self._t_end)
        pos = self._p0 + self._spline(tc)
        vel = self._spline(tc, 1) if t < self._t_end else np.zeros(3)
        return pos, vel

    def wrench(self, t: float, pose: Pose, tip_vel_world: np.ndarray) -> np.ndarray:
        """World-frame wrench the hand applies to the master tip."""
        p_ref, v_ref = self.reference(t)
        c = self.cfg
        force = c.stiffness * (p_ref - pose.position) + c.damping * (v_ref - tip_vel_world[:3])
        q_err = quat_multiply(quat_conjugate(pose.orientation), self._q_ref)
        if q_err[0] < 0.0:
            q_err = -q_err
        # small-angle axis in the tip frame, rotated out to world axes
        from .chain import quat_to_matrix
        axis_world = quat_to_matrix(pose.orientation) @ q_err[1:]
        moment = c.rot_stiffness * axis_world - c.rot_damping * tip_vel_world[3:]
        return np.concatenate([force, moment])


# ---------------------------------------------------------------------------
# per-side runtime

@dataclass
class SideState:
    q: np.ndarray
    dq: np.ndarray
    kin: object = None
    v_b: np.ndarray = None
    v_tip_world: np.ndarray = None
    pose: Pose = None
    jac_tip: np.ndarray = None
    mass: np.ndarray = None
    bias: np.ndarray = None


class SideRuntime:
    """Truth plant state plus the controller-side model and estimators."""

    def __init__(self, side_cfg: SideConfig, dt: float, rng: np.random.Generator,
                 use_dls: bool, gravity: GravityVector):
        self.cfg = side_cfg
        self.truth = side_cfg.truth_chain()
        self.model = side_cfg.model_chain(rng)
        self.gravity = gravity
        self.controller = ChainVdcController(
            self.model, side_cfg.gains, dt, gravity.g, use_dls=use_dls,
            dls_lambda=side_cfg.dls_lambda, q0=side_cfg.q0)
        self.observer = ForceObserverState(
            gain=side_cfg.observer_gain,
            joint_damping=None)
        self.state = SideState(side_cfg.q0.astype(float).copy(),
                               np.zeros(self.truth.dof))
        self.tau_cmd = np.zeros(self.truth.dof)
        self.tau_applied = np.zeros(self.truth.dof)
        self.engage_pos = None
        self.engage_quat = None
        self.filters = None
        self.force_est_tip = np.zeros(6)
        self.force_est_world = np.zeros(6)
        self.lag_alpha = (1.0 - np.exp(-dt / side_cfg.actuator_lag)
                          if side_cfg.actuator_lag > 0.0 else 1.0)
        self.refresh()

    def refresh(self):
        """Recompute cached kinematic quantities at the current plant state."""
        st = self.state
        st.kin = compute_kinematics(self.truth, st.q)
        st.v_b, v_t = velocity_pass(st.kin, st.dq)
        r = st.kin.rot_wt[-1]
        st.v_tip_world = rotate_twist(r, v_t[-1])
        st.pose = st.kin.tip_pose
        st.jac_tip = jacobian(self.truth, st.q, st.kin)
        st.mass = mass_matrix(self.truth, st.q, st.kin)
        st.bias = None  # velocity-dependent, computed on use

    def engage(self):
        self.engage_pos = self.state.pose.position.copy()
        self.engage_quat = self.state.pose.orientation.copy()

    def relative_pose(self) -> Pose:
        q_rel = quat_multiply(quat_conjugate(self.engage_quat), self.state.pose.orientation)
        if q_rel[0] < 0.0:
            q_rel = -q_rel
        return Pose(self.state.pose.position - self.engage_pos, q_rel)

    def advance(self, tau_external: np.ndarray, dt: float, step: int):
        """Semi-implicit Euler on the truth plant."""
        st = self.state
        bias = bias_torques(self.truth, st.q, st.dq, self.gravity, st.kin)
        if self.cfg.joint_damping > 0.0:
            bias = bias + self.cfg.joint_damping * st.dq
        rhs = self.tau_applied + tau_external - bias
        qdd = np.linalg.solve(st.mass, rhs)
        st.dq = st.dq + dt * qdd
        st.q = st.q + dt * st.dq
        if not np.all(np.isfinite(st.q)) or np.abs(st.dq).max() > 1e4:
            raise SimulationDivergedError(step, f"{self.truth.name} state not finite")
        self.refresh()

    def observe(self, dt: float) -> np.ndarray:
        """Momentum-observer estimate of the external tip wrench (tip frame)."""
        st = self.state
        est = observe_interaction_force(
            self.observer, self.model, JointState(st.q, st.dq),
            self.tau_applied, dt, self.gravity, kin=st.kin)
        self.force_est_tip = est.data
        self.force_est_world = rotate_twist(st.kin.rot_wt[-1], est.data)
        return self.force_est_world

    def apply_command(self, tau_cmd: np.ndarray):
        self.tau_cmd = tau_cmd
        self.tau_applied = self.tau_applied + self.lag_alpha * (tau_cmd - self.tau_applied)


# ---------------------------------------------------------------------------
# world

@dataclass
class RunResult:
    trace: TraceLog
    metrics: "object"
    outcome: str
    abort_step: int | None = None
    abort_reason: str = ""

    @property
    def completed(self) -> bool:
        return self.outcome == "completed"


class TeleopSimulation:
    """Lockstep two-sided world advanced at a fixed control period."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.dt = cfg.dt
        self.gravity = GravityVector()
        rng = np.random.default_rng(cfg.seed)
        self.master = SideRuntime(cfg.master, cfg.dt, rng, use_dls=False,
                                  gravity=self.gravity)
        self.surrogate = SideRuntime(cfg.surrogate, cfg.dt, rng, use_dls=True,
                                     gravity=self.gravity)
        self.env = cfg.environment
        self.operator = OperatorModel(cfg.operator, self.master.state.pose)
        self.ch_m2s = DelayLine(cfg.delay_mode, cfg.delay, cfg.max_delay, cfg.seed + 1)
        self.ch_s2m = DelayLine(cfg.delay_mode, cfg.delay, cfg.max_delay, cfg.seed + 2)
        self.scaling = cfg.scaling
        self.step_count = 0
        self.indexing_open = False
        self._engage_all()
        self.master.filters = FilteredSide.create(self._raw_signals(self.master),
                                                  cfg.scaling.filter_c)
        self.surrogate.filters = FilteredSide.create(self._raw_signals(self.surrogate),
                                                     cfg.scaling.filter_c)
        self.env_force_world = np.zeros(6)   # wrench the tool applies to the environment
        self.env_penetration = 0.0
        self._prev_tip_vel_s = self.surrogate.state.v_tip_world.copy()
        self._tip_acc_s = np.zeros(6)
        self._vsr_prev = np.zeros(6)
        self._asr_filt = FilterState(np.zeros(6), cfg.scaling.filter_c)
        self.last_piston_force = 0.0
        n_m, n_s = self.master.truth.dof, self.surrogate.truth.dof
        capacity = int(round(cfg.duration / cfg.dt)) + 1
        self.trace = TraceLog(_trace_columns(n_m, n_s), capacity)
        self.p_t7 = 0.0
        self.p_t = 0.0
        self._bar_m = np.full(n_m, cfg.master.gains.k_b)
        self._bar_s = np.full(n_s, cfg.surrogate.gains.k_b)

    # -- helpers -----------------------------------------------------------

    def _engage_all(self):
        self.master.engage()
        self.surrogate.engage()

    def _raw_signals(self, side: SideRuntime) -> SideSignals:
        return SideSignals(side.state.v_tip_world.copy(), side.relative_pose(),
                           -side.force_est_world)

    def _indexing_state(self, t: float) -> bool:
        for window in self.cfg.operator.indexing:
            if window[0] <= t < window[1]:
                return True
        return False

    def _disturbance(self, t: float, side_name: str, n: int) -> np.ndarray:
        tau = np.zeros(n)
        for d in self.cfg.disturbances:
            if d.side == side_name and t >= d.start and d.amplitude != 0.0:
                tau[d.joint] += d.amplitude * np.sin(
                    2.0 * np.pi * d.frequency * (t - d.start))
        return tau

    # -- one cycle ----------------------------------------------------------

    def step(self):
        cfg = self.cfg
        dt = self.dt
        t = self.step_count * dt
        m, s = self.master, self.surrogate

        # indexing transitions: on close, re-register both sides
        was_open = self.indexing_open
        self.indexing_open = self._indexing_state(t)
        if was_open and not self.indexing_open:
            self._engage_all()
            m.filters.pose = m.filters.pose.from_pose(m.relative_pose(), cfg.scaling.filter_c)
            s.filters.pose = s.filters.pose.from_pose(s.relative_pose(), cfg.scaling.filter_c)

        # (1) operator wrench at the master tip
        f_hand_world = self.operator.wrench(t, m.state.pose, m.state.v_tip_world)
        f_hand_tip = rotate_twist(m.state.kin.rot_wt[-1].T, f_hand_world)
        tau_h = m.state.jac_tip.T @ f_hand_tip
        tau_h = tau_h + self._disturbance(t, "master", m.truth.dof)

        # (2) master forward dynamics under the previous command
        m.advance(tau_h, dt, self.step_count)

        # (3) interaction-force observers (commanded torque only; the human
        #     wrench and disturbances are what they estimate)
        m.observe(dt)
        s.observe(dt)

        # (4) own-side filters
        raw_m = self._raw_signals(m)
        raw_s = self._raw_signals(s)
        filt_m = m.filters.step(raw_m, dt)
        filt_s = s.filters.step(raw_s, dt)

        # (5) channel exchange of the filtered bundles
        self.ch_m2s.push(t, filt_m.to_array())
        self.ch_s2m.push(t, filt_s.to_array())
        remote_s = SideSignals.from_array(self.ch_s2m.sample(t))   # at master
        remote_m = SideSignals.from_array(self.ch_m2s.sample(t))   # at surrogate

        # (6) desired velocities
        if self.indexing_open:
            v_md = m.state.v_tip_world.copy()   # master free-floats
            v_sd = np.zeros(6)                  # surrogate holds pose
            f_m_filt = np.zeros(6)
            f_s_filt = np.zeros(6)
        else:
            f_m_filt = filt_m.force
            f_s_filt = filt_s.force
            v_md = desired_master_velocity(remote_s, raw_m.pose, f_m_filt, self.scaling)
            v_sd = desired_surrogate_velocity(remote_m, raw_s.pose, self.scaling)

        # (7) both controllers
        a_mat = self.scaling.a_matrix
        v_mr = required_velocity(v_md, f_m_filt, a_mat)
        r_m = m.state.kin.rot_wt[-1]
        v_mr_tip = rotate_twist(r_m.T, v_mr)
        tip_req_m = -m.force_est_tip
        tau_m, diag_m = m.controller.step(m.state.kin, m.state.q, m.state.dq,
                                          v_mr_tip, tip_req_m, v_b=m.state.v_b)
        m.apply_command(tau_m)
        self._bar_m = diag_m.barrier_margin

        v_sr = required_velocity(v_sd, f_s_filt, a_mat)
        asr_raw = (v_sr - self._vsr_prev) / dt
        self._vsr_prev = v_sr.copy()
        self._asr_filt = filter_step(self._asr_filt, asr_raw, dt)
        r_s = s.state.kin.rot_wt[-1]
        v_sr_tip = rotate_twist(r_s.T, v_sr)
        if self.env is not None and self.env.enabled:
            f_ed = desired_environment_force(self.env, s.state.pose.position,
                                             s.state.v_tip_world, self._asr_filt.value)
        else:
            f_ed = np.zeros(6)
        tip_req_s = rotate_twist(r_s.T, f_ed)
        tau_s, diag_s = s.controller.step(s.state.kin, s.state.q, s.state.dq,
                                          v_sr_tip, tip_req_s, v_b=s.state.v_b)
        s.apply_command(tau_s)
        self._bar_s = diag_s.barrier_margin

        # wrist piston output (gear-driven joint): diagnostic actuator force
        wrist = s.truth.dof - 1
        piston_net = piston_net_required_force(
            0.0, 0.0, self.cfg.surrogate.gear_ratio,
            s.controller.prev_dq_r[wrist], s.controller.qdd_r[wrist])
        self.last_piston_force = required_piston_force(
            s.controller.last_f_r[wrist], s.truth.screws[wrist],
            piston_net, self.cfg.surrogate.gear_ratio)

        # boundary virtual power flows (tip frames)
        v_t_m_tip = rotate_twist(r_m.T, m.state.v_tip_world)
        self.p_t7 = float((diag_m.tip_required_velocity - v_t_m_tip)
                          @ (tip_req_m - (-f_hand_tip)))
        f_env_tip = rotate_twist(r_s.T, self.env_force_world)
        v_t_s_tip = rotate_twist(r_s.T, s.state.v_tip_world)
        self.p_t = float((diag_s.tip_required_velocity - v_t_s_tip)
                         @ (tip_req_s - f_env_tip))

        # (8) surrogate forward dynamics: command plus environment reaction
        tau_env = -s.state.jac_tip.T @ f_env_tip
        s.advance(tau_env + self._disturbance(t, "surrogate", s.truth.dof),
                  dt, self.step_count)

        # (9) environment update at the new tip state
        self._tip_acc_s = (s.state.v_tip_world - self._prev_tip_vel_s) / dt
        self._prev_tip_vel_s = s.state.v_tip_world.copy()
        if self.env is not None and self.env.enabled:
            f_e, _ = environment_force(self.env, s.state.pose.position,
                                       s.state.v_tip_world, self._tip_acc_s)
            self.env_force_world = f_e
            self.env_penetration = self.env.penetration(s.state.pose.position)
        else:
            self.env_force_world = np.zeros(6)
            self.env_penetration = 0.0

        # (10) log
        self.step_count += 1
        self._log(t + dt, f_hand_world, v_mr, v_sr)

    def _log(self, t, f_hand_world, v_mr, v_sr):
        m, s = self.master, self.surrogate
        pose_m = m.relative_pose()
        pose_s = s.relative_pose()
        rho_v = self.scaling.scale_motion(m.state.v_tip_world) - s.state.v_tip_world
        rho_p = pose_error(pose_m, pose_s, self.scaling.kappa_p)
        row = np.concatenate([
            [t], m.state.q, m.state.dq, s.state.q, s.state.dq,
            pose_m.position, pose_m.orientation, pose_s.position, pose_s.orientation,
            m.state.v_tip_world, s.state.v_tip_world,
            -m.force_est_world, -s.force_est_world,
            -f_hand_world, self.env_force_world,
            v_mr - m.state.v_tip_world, v_sr - s.state.v_tip_world,
            rho_v, rho_p,
            [self.p_t7, self.p_t], self._bar_m, self._bar_s,
            [self.env_penetration, self.last_piston_force,
             self.scaling.kappa_p, self.scaling.kappa_f],
            self.env.normal if self.env is not None else np.array([1.0, 0.0, 0.0]),
        ])
        self.trace.append(row)

    def run(self) -> TraceLog:
        n_steps = int(round(self.cfg.duration / self.dt))
        for _ in range(n_steps):
            self.step()
        return self.trace


def run_scenario(cfg: ScenarioConfig, raise_on_abort: bool = False) -> RunResult:
    """Run a scenario to completion, producing the trace, metrics and outcome.

    Barrier violations and numerical divergence abort the run; unless
    ``raise_on_abort`` is set they are reported in the result so sweeps stay
    deterministic, with metrics computed over the partial trace.
    """
    from .metrics import compute_metrics

    sim = TeleopSimulation(cfg)
    outcome, abort_step, reason = "completed", None, ""
    try:
        sim.run()
    except BarrierViolationError as exc:
        if raise_on_abort:
            raise
        outcome, abort_step, reason = "aborted_barrier", sim.step_count, str(exc)
    except SimulationDivergedError as exc:
        if raise_on_abort:
            raise
        outcome, abort_step, reason = "aborted_divergence", exc.step, str(exc)

    metrics = compute_metrics(sim.trace) if sim.trace.rows > 1 else None
    result = RunResult(sim.trace, metrics, outcome, abort_step, reason)
    if cfg.out_dir is not None:
        import os
        os.makedirs(cfg.out_dir, exist_ok=True)
        sim.trace.to_csv(os.path.join(cfg.out_dir, f"{cfg.label}_trace.csv"))
        if metrics is not None:
            metrics.to_csv(os.path.join(cfg.out_dir, f"{cfg.label}_metrics.csv"))
    return result


# ---------------------------------------------------------------------------
# passive single-chain integrator (energy oracle support)

def simulate_passive(chain: ChainModel, q0: np.ndarray, dq0: np.ndarray,
                     duration: float, dt: float = 1e-3,
                     gravity: GravityVector | None = None):
    """Undriven chain under gravity with the same semi-implicit Euler scheme;
    returns time, q, dq histories."""
    gravity = gravity or GravityVector()
    n_steps = int(round(duration / dt))
    q = np.asarray(q0, float).copy()
    dq = np.asarray(dq0, float).copy()
    qs = np.zeros((n_steps, q.size))
    dqs = np.zeros((n_steps, q.size))
    ts = np.zeros(n_steps)
    for k in range(n_steps):
        kin = compute_kinematics(chain, q)
        m = mass_matrix(chain, q, kin)
        bias = bias_torques(chain, q, dq, gravity, kin)
        qdd = np.linalg.solve(m, -bias)
        dq = dq + dt * qdd
        q = q + dt * dq
        ts[k] = (k + 1) * dt
        qs[k] = q
        dqs[k] = dq
    return ts, qs, dqs

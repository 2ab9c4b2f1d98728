"""Scenario configuration: chain presets, YAML loading and validation.

A scenario file is key/value structured text with nested sections (YAML).
All validation problems are collected and reported together.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .analysis import (FrequencyGrid, ImpedanceModel,
                       default_environment_impedance, default_hand_impedance)
from .chain import ChainModel, LinkSpec
from .coupling import ScalingConfig
from .estimation import EstimatorGains
from .master_control import VdcGains
from .rigid_body import InertialParams, clamp_spd, phi_to_L, L_to_phi
from .spatial import FrameTransform
from .surrogate_control import EnvironmentModel


class ConfigError(ValueError):
    """Raised with every validation problem listed at once."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario configuration:\n  - " + "\n  - ".join(problems))


# ---------------------------------------------------------------------------
# chain presets

def _rod(mass: float, length: float) -> InertialParams:
    axis = np.array([1.0, 0.0, 0.0])
    com = 0.5 * length * axis
    i_com = (mass * length ** 2 / 12.0) * (np.eye(3) - np.outer(axis, axis))
    i_origin = i_com + mass * ((com @ com) * np.eye(3) - np.outer(com, com))
    return InertialParams(mass, mass * com, i_origin)


_AXES = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 1.0, 0]), "z": np.array([0, 0, 1.0])}


def _revolute_links(axes: str, lengths, masses, rotor) -> tuple[LinkSpec, ...]:
    links = []
    for ax, length, mass, ri in zip(axes, lengths, masses, rotor):
        mount = FrameTransform(np.eye(3), np.zeros(3))
        tip = FrameTransform(np.eye(3), np.array([length, 0.0, 0.0]))
        screw = np.concatenate([np.zeros(3), _AXES[ax]])
        links.append(LinkSpec(mount, screw, tip, _rod(mass, length), rotor_inertia=ri))
    return tuple(links)


def master_chain() -> ChainModel:
    """Generic 7-DoF anthropomorphic arm: 0.3 m links, 2 kg each."""
    return ChainModel(_revolute_links("zyxyxyz", [0.3] * 7, [2.0] * 7, [0.05] * 7),
                      name="master")


def surrogate_chain() -> ChainModel:
    """6-DoF heavy chain: 3-DoF anthropomorphic arm plus a spherical wrist."""
    return ChainModel(_revolute_links("zyyxyz", [2.0, 2.0, 2.0, 0.4, 0.3, 0.3],
                                      [500.0, 400.0, 300.0, 200.0, 150.0, 100.0],
                                      [30.0] * 6),
                      name="surrogate")


def augment_human(chain: ChainModel, added_mass: float = 1.5,
                  added_inertia: float = 0.01, distal: int = 3) -> ChainModel:
    """Fold a human-arm inertia share into the distal links of the master."""
    params = []
    n = chain.dof
    for i, link in enumerate(chain.links):
        p = link.inertia
        if i >= n - distal:
            com = p.first_moment / p.mass
            mass = p.mass + added_mass
            params.append(InertialParams(
                mass, mass * com, p.inertia + added_inertia * np.eye(3)
                + added_mass * ((com @ com) * np.eye(3) - np.outer(com, com))))
        else:
            params.append(p)
    return chain.with_inertias(params)


def perturb_inertias(chain: ChainModel, pct: float, rng: np.random.Generator) -> ChainModel:
    """Controller-side model: true parameters multiplied by (1 +- pct), with
    the symmetric-matrix image clamped back to positive definite."""
    if pct == 0.0:
        return chain
    params = []
    for link in chain.links:
        phi = link.inertia.phi * (1.0 + rng.uniform(-pct, pct, size=10))
        l_mat = clamp_spd(phi_to_L(InertialParams.from_phi(phi)), 1e-6)
        params.append(L_to_phi(l_mat))
    rotor = chain.rotor_inertia * (1.0 + rng.uniform(-pct, pct, size=chain.dof))
    return chain.with_inertias(params, np.maximum(rotor, 1e-4))


_PRESETS = {"exo7": master_chain, "crane6": surrogate_chain}

DEFAULT_MASTER_Q0 = np.array([0.2, -0.5, 0.3, 0.8, -0.4, 0.6, 0.2])
DEFAULT_SURROGATE_Q0 = np.array([0.0, 0.6, -1.1, 0.3, 0.5, -0.2])


def default_master_gains() -> VdcGains:
    return VdcGains(
        k_body_linear=40.0, k_body_angular=4.0, k_joint=25.0, k_b=0.2, c1=1.0,
        nal_gamma=2e4, nal_gamma0=1e-8, joint_gamma=2e4, joint_gamma0=1e-8,
        body_rbf=EstimatorGains(weight_gain=2.0, weight_leak=1e-2,
                                bias_gain=400.0, bias_leak=1e-6),
        joint_rbf=EstimatorGains(weight_gain=2.0, weight_leak=1e-2,
                                 bias_gain=2e3, bias_leak=1e-5),
        rbf_error_bound=0.5)


def default_surrogate_gains() -> VdcGains:
    return VdcGains(
        k_body_linear=2_000.0, k_body_angular=400.0,
        k_tool_linear=3_000.0, k_tool_angular=600.0,
        k_joint=2e4, k_b=0.35, c1=1.0,
        nal_gamma=5e8, nal_gamma0=1e-10, joint_gamma=1e8, joint_gamma0=1e-10,
        body_rbf=EstimatorGains(weight_gain=50.0, weight_leak=1e-2,
                                bias_gain=2e4, bias_leak=1e-6),
        joint_rbf=EstimatorGains(weight_gain=50.0, weight_leak=1e-2,
                                 bias_gain=2e5, bias_leak=1e-7),
        rbf_error_bound=0.5)


@dataclass
class SideConfig:
    preset: str
    q0: np.ndarray
    gains: VdcGains
    uncertainty_pct: float = 0.2
    observer_gain: float = 60.0
    joint_damping: float = 0.0      # plant-side viscous damping (unknown to controller)
    actuator_lag: float = 0.0
    dls_lambda: float = 0.01
    gear_ratio: float = 2.0
    human_mass: float = 0.0
    human_inertia: float = 0.0

    def truth_chain(self) -> ChainModel:
        chain = _PRESETS[self.preset]()
        if self.human_mass > 0.0 or self.human_inertia > 0.0:
            chain = augment_human(chain, self.human_mass, self.human_inertia)
        return chain

    def model_chain(self, rng: np.random.Generator) -> ChainModel:
        return perturb_inertias(self.truth_chain(), self.uncertainty_pct, rng)


@dataclass
class OperatorConfig:
    """Spring-damper hand pulling the master tip along a splined reference."""

    waypoints: list = field(default_factory=lambda: [[0.0, 0.0, 0.0, 0.0],
                                                     [3.0, 0.08, 0.0, 0.0]])
    stiffness: float = 40.0
    damping: float = 25.0
    rot_stiffness: float = 8.0
    rot_damping: float = 0.8
    indexing: list = field(default_factory=list)   # [t_open, t_close] windows


@dataclass
class DisturbanceSpec:
    side: str = "master"
    joint: int = 0
    amplitude: float = 0.0
    frequency: float = 1.0
    start: float = 0.0


@dataclass
class ScenarioConfig:
    label: str = "scenario"
    duration: float = 10.0
    dt: float = 1e-3
    seed: int = 0
    out_dir: str | None = None
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    delay_mode: str = "none"
    delay: float = 0.0
    max_delay: float = 0.0
    master: SideConfig = None
    surrogate: SideConfig = None
    environment: EnvironmentModel | None = None
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    disturbances: list = field(default_factory=list)
    ze: ImpedanceModel = field(default_factory=default_environment_impedance)
    zh: ImpedanceModel = field(default_factory=default_hand_impedance)
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)

    def __post_init__(self):
        if self.master is None:
            self.master = SideConfig("exo7", DEFAULT_MASTER_Q0.copy(),
                                     default_master_gains(),
                                     joint_damping=0.5, human_mass=1.5,
                                     human_inertia=0.01)
        if self.surrogate is None:
            self.surrogate = SideConfig("crane6", DEFAULT_SURROGATE_Q0.copy(),
                                        default_surrogate_gains(),
                                        actuator_lag=0.02)


def default_scenario(**overrides) -> ScenarioConfig:
    cfg = ScenarioConfig()
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError([f"unknown scenario field {key!r}"])
        setattr(cfg, key, value)
    return cfg


# ---------------------------------------------------------------------------
# YAML loading

def _update_gains(gains: VdcGains, data: dict, problems: list, where: str) -> VdcGains:
    gains = copy.deepcopy(gains)
    valid = {f.name for f in fields(VdcGains)}
    for key, value in data.items():
        if key in ("body_rbf", "joint_rbf"):
            try:
                setattr(gains, key, EstimatorGains(**value))
            except (TypeError, ValueError) as exc:
                problems.append(f"{where}.{key}: {exc}")
        elif key in valid:
            setattr(gains, key, float(value))
        else:
            problems.append(f"{where}.{key}: unknown gain")
    return gains


def _side_from_dict(data: dict, default: SideConfig, problems: list, where: str) -> SideConfig:
    side = copy.deepcopy(default)
    for key, value in data.items():
        if key == "preset":
            if value not in _PRESETS:
                problems.append(f"{where}.preset: unknown preset {value!r}")
            else:
                side.preset = value
        elif key == "q0":
            side.q0 = np.asarray(value, float)
        elif key == "gains":
            side.gains = _update_gains(side.gains, value, problems, f"{where}.gains")
        elif key in ("uncertainty_pct", "observer_gain", "joint_damping",
                     "actuator_lag", "dls_lambda", "gear_ratio", "human_mass",
                     "human_inertia"):
            setattr(side, key, float(value))
        else:
            problems.append(f"{where}.{key}: unknown field")
    return side


def _impedance_from_dict(data: dict, problems: list, where: str) -> ImpedanceModel:
    try:
        return ImpedanceModel.from_scalars(**{k: float(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return ImpedanceModel.from_scalars()


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    problems: list[str] = []
    cfg = ScenarioConfig()

    run = raw.get("run", {})
    cfg.label = str(run.get("label", cfg.label))
    cfg.duration = float(run.get("duration", cfg.duration))
    cfg.dt = float(run.get("dt", cfg.dt))
    cfg.seed = int(run.get("seed", cfg.seed))
    cfg.out_dir = run.get("out_dir", cfg.out_dir)
    if cfg.dt <= 0.0:
        problems.append("run.dt: step must be positive")
    if cfg.duration < cfg.dt:
        problems.append("run.duration: must be at least one step")

    if "scaling" in raw:
        try:
            cfg.scaling = ScalingConfig(**{k: float(v) for k, v in raw["scaling"].items()})
        except (TypeError, ValueError) as exc:
            problems.append(f"scaling: {exc}")

    delay = raw.get("delay", {})
    cfg.delay_mode = delay.get("mode", "none")
    cfg.delay = float(delay.get("delay", 0.0))
    cfg.max_delay = float(delay.get("max_delay", cfg.delay))
    if cfg.delay_mode not in ("none", "fixed", "varying"):
        problems.append(f"delay.mode: unknown mode {cfg.delay_mode!r}")
    if cfg.delay < 0.0 or cfg.max_delay < 0.0:
        problems.append("delay: delays must be non-negative")

    if "master" in raw:
        cfg.master = _side_from_dict(raw["master"], cfg.master, problems, "master")
    if "surrogate" in raw:
        cfg.surrogate = _side_from_dict(raw["surrogate"], cfg.surrogate, problems, "surrogate")

    if "environment" in raw:
        env = dict(raw["environment"])
        enabled = env.pop("enabled", True)
        try:
            cfg.environment = EnvironmentModel(
                normal=np.asarray(env.pop("normal", [1.0, 0.0, 0.0]), float),
                point=np.asarray(env.pop("point", [0.0, 0.0, 0.0]), float),
                enabled=bool(enabled), **{k: float(v) for k, v in env.items()})
        except (TypeError, ValueError) as exc:
            problems.append(f"environment: {exc}")

    if "operator" in raw:
        op = raw["operator"]
        known = {f.name for f in fields(OperatorConfig)}
        unknown = set(op) - known
        for key in sorted(unknown):
            problems.append(f"operator.{key}: unknown field")
        cfg.operator = OperatorConfig(**{k: v for k, v in op.items() if k in known})
    wp = cfg.operator.waypoints
    if len(wp) < 2:
        problems.append("operator.waypoints: need at least two waypoints")
    elif any(len(p) != 4 for p in wp):
        problems.append("operator.waypoints: entries must be [t, dx, dy, dz]")
    elif any(b[0] <= a[0] for a, b in zip(wp, wp[1:])):
        problems.append("operator.waypoints: times must increase")

    for i, d in enumerate(raw.get("disturbance", []) or []):
        try:
            cfg.disturbances.append(DisturbanceSpec(**d))
        except TypeError as exc:
            problems.append(f"disturbance[{i}]: {exc}")

    analysis = raw.get("analysis", {})
    if "ze" in analysis:
        cfg.ze = _impedance_from_dict(analysis["ze"], problems, "analysis.ze")
    if "zh" in analysis:
        cfg.zh = _impedance_from_dict(analysis["zh"], problems, "analysis.zh")
    if "grid" in analysis:
        try:
            cfg.grid = FrequencyGrid(**{k: (int(v) if k == "points" else float(v))
                                        for k, v in analysis["grid"].items()})
        except (TypeError, ValueError) as exc:
            problems.append(f"analysis.grid: {exc}")

    known_top = {"run", "scaling", "delay", "master", "surrogate", "environment",
                 "operator", "disturbance", "analysis"}
    for key in sorted(set(raw) - known_top):
        problems.append(f"{key}: unknown section")

    if problems:
        raise ConfigError(problems)
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(["scenario file must contain a mapping of sections"])
    return scenario_from_dict(raw)

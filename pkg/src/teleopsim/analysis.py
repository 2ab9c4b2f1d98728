"""Frequency-domain checks: the delay-robustness sufficient condition on the
two loop-gain products, the transparency matrix with its ideal gap, and the
time-domain virtual-power-flow integral monitors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coupling import ScalingConfig


class AnalysisError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImpedanceModel:
    """Per-axis mass-damper-spring impedance ``Z(s) = M s + D + K / s``."""

    mass: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray

    def __post_init__(self):
        for name in ("mass", "damping", "stiffness"):
            arr = np.asarray(getattr(self, name), float)
            if arr.ndim == 0:
                arr = np.full(6, float(arr))
            if arr.shape != (6,):
                raise ValueError(f"{name} must be scalar or length-6")
            if np.any(arr < 0.0):
                raise ValueError(f"{name} coefficients must be non-negative")
            object.__setattr__(self, name, arr)

    @staticmethod
    def from_scalars(mass=0.0, damping=0.0, stiffness=0.0) -> "ImpedanceModel":
        return ImpedanceModel(np.full(6, float(mass)), np.full(6, float(damping)),
                              np.full(6, float(stiffness)))

    def evaluate(self, s: complex) -> np.ndarray:
        """Diagonal 6x6 impedance at complex frequency ``s``."""
        return np.diag(self.mass * s + self.damping + self.stiffness / s)

    def times_s(self, s: complex) -> np.ndarray:
        """``s * Z(s)`` evaluated without the 1/s singularity at DC."""
        return np.diag(self.mass * s * s + self.damping * s + self.stiffness)


# default closures used when a scenario does not configure its own
def default_environment_impedance() -> ImpedanceModel:
    return ImpedanceModel.from_scalars(mass=0.0, damping=1e3, stiffness=1e5)


def default_hand_impedance() -> ImpedanceModel:
    return ImpedanceModel.from_scalars(mass=5.0, damping=20.0, stiffness=0.0)


@dataclass(frozen=True)
class FrequencyGrid:
    """Logarithmically spaced evaluation frequencies (rad/s)."""

    w_min: float = 1e-2
    w_max: float = 1e3
    points: int = 400

    def __post_init__(self):
        if self.w_min <= 0.0 or self.w_max <= self.w_min or self.points < 2:
            raise ValueError("grid must be positive, increasing, with >= 2 points")

    def omegas(self, points: int | None = None) -> np.ndarray:
        return np.logspace(np.log10(self.w_min), np.log10(self.w_max),
                           points or self.points)


def loop_matrices(cfg: ScalingConfig, z_e: ImpedanceModel, z_h: ImpedanceModel,
                  s: complex) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """The four transfer matrices of the delay-robustness condition at ``s``."""
    eye = np.eye(6)
    lam = cfg.lam_matrix
    a = cfg.a_matrix
    kfkp = cfg.kappa_f_matrix @ np.linalg.inv(cfg.kappa_p_matrix)
    s_lam = s * eye + lam
    filt = (s / cfg.filter_c) * eye + eye
    s_a_ze = a @ z_e.times_s(s)
    s_a_zh = a @ kfkp @ z_h.times_s(s)
    h1s = s_lam @ filt + s_a_ze
    h2s = s_lam - s_a_zh
    h1m = s_lam @ filt + s_a_zh
    h2m = s_lam - s_a_ze
    return h1s, h2s, h1m, h2m


def _product_norms(cfg, z_e, z_h, omega: float) -> tuple[float, float]:
    s = 1j * omega
    h1s, h2s, h1m, h2m = loop_matrices(cfg, z_e, z_h, s)
    for name, h1 in (("surrogate", h1s), ("master", h1m)):
        if np.linalg.cond(h1) > 1e12:
            raise AnalysisError(f"{name}-side loop matrix singular at omega={omega:g} rad/s")
    gs = np.linalg.solve(h1s, h2s)
    gm = np.linalg.solve(h1m, h2m)
    p1 = np.linalg.svd(gs @ gm, compute_uv=False)[0]
    p2 = np.linalg.svd(gm @ gs, compute_uv=False)[0]
    return float(p1), float(p2)


@dataclass
class StabilityReport:
    satisfied: bool
    margin: float
    worst_omega: float
    sup_product1: float
    sup_product2: float
    omegas: np.ndarray
    product1: np.ndarray
    product2: np.ndarray


def stability_condition(cfg: ScalingConfig, z_e: ImpedanceModel, z_h: ImpedanceModel,
                        grid: FrequencyGrid | None = None,
                        refine_tol: float = 1e-3, max_refinements: int = 5
                        ) -> StabilityReport:
    """Evaluate both loop-gain products over the grid, refining its density
    until the supremum is stable, and report verdict and margin.

    Satisfied iff both products stay below one everywhere; the margin is one
    minus the larger supremum.
    """
    grid = grid or FrequencyGrid()
    points = grid.points
    prev_sup = None
    while True:
        omegas = grid.omegas(points)
        p1 = np.empty(points)
        p2 = np.empty(points)
        for i, w in enumerate(omegas):
            p1[i], p2[i] = _product_norms(cfg, z_e, z_h, w)
        sup1, sup2 = float(p1.max()), float(p2.max())
        sup = max(sup1, sup2)
        if prev_sup is not None and abs(sup - prev_sup) <= refine_tol * max(sup, 1e-12):
            break
        prev_sup = sup
        if points >= grid.points * 2 ** max_refinements:
            break
        points *= 2
    worst = float(omegas[int(np.argmax(np.maximum(p1, p2)))])
    return StabilityReport(satisfied=sup < 1.0, margin=1.0 - sup, worst_omega=worst,
                           sup_product1=sup1, sup_product2=sup2,
                           omegas=omegas, product1=p1, product2=p2)


# ---------------------------------------------------------------------------
# transparency

@dataclass
class TransparencyBlocks:
    g11: np.ndarray
    g12: np.ndarray
    g21: np.ndarray
    g22: np.ndarray


def transparency_matrix(cfg: ScalingConfig, omega: float) -> TransparencyBlocks:
    """The four 6x6 blocks of the master-force/surrogate-velocity map at
    ``s = j omega``: off-diagonals are the ideal scaling blocks, the
    diagonals are the fidelity defects."""
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    s = 1j * omega
    eye = np.eye(6)
    kf_inv = np.linalg.inv(cfg.kappa_f_matrix)
    kp = cfg.kappa_p_matrix
    a_inv = np.linalg.inv(cfg.a_matrix)
    g11 = kf_inv @ kp @ a_inv @ (eye / cfg.filter_c) @ (s * eye + cfg.lam_matrix)
    g12 = kf_inv.astype(complex)
    g21 = (-kp).astype(complex)
    g22 = s * np.linalg.inv(s * eye + cfg.lam_matrix) @ cfg.a_matrix
    return TransparencyBlocks(g11, g12, g21, g22)


@dataclass
class TransparencyReport:
    omegas: np.ndarray
    g11_mag: np.ndarray
    g22_mag: np.ndarray
    g11_dc: float
    g22_dc: float
    sup_g11: float
    sup_g22: float


def transparency_report(cfg: ScalingConfig, grid: FrequencyGrid | None = None
                        ) -> TransparencyReport:
    grid = grid or FrequencyGrid()
    omegas = grid.omegas()
    g11_mag = np.empty_like(omegas)
    g22_mag = np.empty_like(omegas)
    for i, w in enumerate(omegas):
        blocks = transparency_matrix(cfg, w)
        g11_mag[i] = np.linalg.svd(blocks.g11, compute_uv=False)[0]
        g22_mag[i] = np.linalg.svd(blocks.g22, compute_uv=False)[0]
    g11_dc = float(np.linalg.svd(
        transparency_matrix(cfg, grid.w_min).g11, compute_uv=False)[0])
    return TransparencyReport(omegas, g11_mag, g22_mag,
                              g11_dc=g11_dc, g22_dc=float(g22_mag[0]),
                              sup_g11=float(g11_mag.max()), sup_g22=float(g22_mag.max()))


def ideal_gap(report: TransparencyReport) -> dict:
    """Distance from ideal transparency (both diagonal blocks identically zero)."""
    return {"sup_g11": report.sup_g11, "sup_g22": report.sup_g22,
            "dc_g11": report.g11_dc, "dc_g22": report.g22_dc}


# ---------------------------------------------------------------------------
# VPF integral monitors

@dataclass
class VpfMonitorResult:
    integral: np.ndarray
    minimum: float
    bound: float
    ok: bool


def vpf_running_integral(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Trapezoidal running integral of a boundary power-flow sample series."""
    t = np.asarray(t, float)
    p = np.asarray(p, float)
    if t.size == 0:
        raise ValueError("empty trace")
    out = np.zeros_like(p)
    if t.size > 1:
        out[1:] = np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(t))
    return out


def vpf_integral_monitor(t: np.ndarray, p: np.ndarray, bound: float) -> VpfMonitorResult:
    """Check that the running integral never drops below ``-bound``.

    ``bound`` is the non-negative constant fixed by the initial conditions of
    the run; the monitor flags any dip of the integrated boundary power
    below it.
    """
    integral = vpf_running_integral(t, p)
    minimum = float(integral.min())
    return VpfMonitorResult(integral, minimum, float(bound), minimum >= -abs(bound) - 1e-12)


def write_analysis_csv(path, report: StabilityReport, transparency: TransparencyReport):
    """CSV with one row per grid frequency: products and diagonal-block gains."""
    omegas = transparency.omegas
    # stability grids may be refined beyond the transparency grid; resample
    p1 = np.interp(omegas, report.omegas, report.product1)
    p2 = np.interp(omegas, report.omegas, report.product2)
    with open(path, "w", newline="") as fh:
        fh.write("omega,product1,product2,g11,g22\n")
        for i in range(omegas.size):
            fh.write(f"{omegas[i]:.12g},{p1[i]:.12g},{p2[i]:.12g},"
                     f"{transparency.g11_mag[i]:.12g},{transparency.g22_mag[i]:.12g}\n")

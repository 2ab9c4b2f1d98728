"""Evaluation metrics computed from a run trace.

The displacement-norm error compares the scaled master displacement norm
against the surrogate displacement norm; the scaled pose error (its norm
often differs) is reported alongside.  Force metrics compare the scaled
master-side force against the surrogate-side force along the contact
normal, over the samples in contact.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .chain import quat_angle, quat_conjugate, quat_multiply
from .simulate import TraceLog


@dataclass
class MetricsReport:
    task_time: float = 0.0
    n_max: float = 0.0            # max |  ||kp x_m|| - ||x_s||  |  (m)
    n_rms: float = 0.0
    n_int: float = 0.0            # integral of the absolute displacement gap (m s)
    n_o_max: float = 0.0          # orientation error extremes (deg)
    n_o_rms: float = 0.0
    v_mae: float = 0.0            # mean | ||kp v_m|| - ||v_s|| |  (m/s)
    rho_index: float = 0.0        # n_max / max ||v_s||
    f_max: float = 0.0            # max |kf F_m - F_s| along the normal (N)
    f_rms: float = 0.0
    f_ratio: float = 0.0          # steady-state F_s / F_m (estimated forces)
    f_ratio_true: float = 0.0     # same from the true wrenches
    rho_p_max: float = 0.0        # sup of the scaled pose-error norm (m)
    rho_p_ss: float = 0.0         # mean over the final 10 %
    rho_v_max: float = 0.0        # sup of the scaled velocity-error norm (m/s)

    def to_csv(self, path):
        names = [f.name for f in fields(self)]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(names) + "\n")
            fh.write(",".join(f"{getattr(self, n):.10g}" for n in names) + "\n")

    @staticmethod
    def from_csv(path) -> "MetricsReport":
        with open(path) as fh:
            names = fh.readline().strip().split(",")
            values = [float(x) for x in fh.readline().strip().split(",")]
        return MetricsReport(**dict(zip(names, values)))


def _quat_angle_series(q_m: np.ndarray, q_s: np.ndarray) -> np.ndarray:
    out = np.empty(q_m.shape[0])
    for i in range(q_m.shape[0]):
        out[i] = quat_angle(quat_multiply(quat_conjugate(q_s[i]), q_m[i]))
    return out


def compute_metrics(trace: TraceLog) -> MetricsReport:
    """Every run metric from a (possibly partial) trace, as defined above."""
    if trace.rows < 2:
        raise ValueError("trace must contain at least two samples")
    t = trace["t"]
    kappa_p = float(trace["kappa_p"][0])
    kappa_f = float(trace["kappa_f"][0])

    p_m = trace.block("x_m", 3)
    q_m = trace.data[:, [trace._index[f"x_m{i}"] for i in range(3, 7)]]
    p_s = trace.block("x_s", 3)
    q_s = trace.data[:, [trace._index[f"x_s{i}"] for i in range(3, 7)]]

    gap = kappa_p * np.linalg.norm(p_m, axis=1) - np.linalg.norm(p_s, axis=1)
    n_abs = np.abs(gap)
    ori_deg = np.degrees(_quat_angle_series(q_m, q_s))

    v_m = trace.block("v_m", 6)
    v_s = trace.block("v_s", 6)
    v_gap = np.abs(kappa_p * np.linalg.norm(v_m[:, :3], axis=1)
                   - np.linalg.norm(v_s[:, :3], axis=1))
    v_s_max = float(np.linalg.norm(v_s[:, :3], axis=1).max())

    rho_p = trace.block("rho_p", 6)
    rho_v = trace.block("rho_v", 6)
    rho_p_norm = np.linalg.norm(rho_p, axis=1)
    tail = max(1, trace.rows // 10)

    report = MetricsReport(
        task_time=float(t[-1] - t[0] + (t[1] - t[0])),
        n_max=float(n_abs.max()),
        n_rms=float(np.sqrt(np.mean(gap ** 2))),
        n_int=float(np.trapezoid(n_abs, t)),
        n_o_max=float(ori_deg.max()),
        n_o_rms=float(np.sqrt(np.mean(ori_deg ** 2))),
        v_mae=float(np.mean(v_gap)),
        rho_index=float(n_abs.max() / v_s_max) if v_s_max > 0.0 else 0.0,
        rho_p_max=float(rho_p_norm.max()),
        rho_p_ss=float(np.mean(rho_p_norm[-tail:])),
        rho_v_max=float(np.linalg.norm(rho_v, axis=1).max()),
    )

    pen = trace["pen"]
    contact = pen > 0.0
    if np.any(contact):
        normal = np.array([trace["cn0"][0], trace["cn1"][0], trace["cn2"][0]])
        # push magnitudes along the loading direction: the master-side signal
        # (worn-device-on-human reaction) carries +normal, the surrogate-side
        # signal (tool-on-wall) carries -normal while pressing
        fm_push = trace.block("fm_hat", 6)[:, :3] @ normal
        fs_push = -(trace.block("fs_hat", 6)[:, :3] @ normal)
        fm_push_true = trace.block("fm_true", 6)[:, :3] @ normal
        fs_push_true = -(trace.block("fs_true", 6)[:, :3] @ normal)
        f_err = kappa_f * fm_push[contact] - fs_push[contact]
        report.f_max = float(np.abs(f_err).max())
        report.f_rms = float(np.sqrt(np.mean(f_err ** 2)))
        idx = np.flatnonzero(contact)
        steady = idx[-max(1, idx.size // 5):]
        fm_steady = float(np.mean(fm_push[steady]))
        fs_steady = float(np.mean(fs_push[steady]))
        if abs(fm_steady) > 1e-9:
            report.f_ratio = fs_steady / fm_steady
        fm_true_steady = float(np.mean(fm_push_true[steady]))
        fs_true_steady = float(np.mean(fs_push_true[steady]))
        if abs(fm_true_steady) > 1e-9:
            report.f_ratio_true = fs_true_steady / fm_true_steady
    return report

"""Evaluation metrics and model-selection indicators.

Positions are in meters on input; distances are reported in millimeters.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .body import ParameterError

PCK_THRESHOLDS_MM = (10.0, 30.0, 70.0)


def _matched(gt, est):
    gt = np.asarray(gt, dtype=float)
    est = np.asarray(est, dtype=float)
    if gt.shape != est.shape:
        raise ParameterError(f"shape mismatch: {gt.shape} vs {est.shape}")
    if gt.ndim == 2:
        gt, est = gt[None], est[None]
    if gt.ndim != 3 or gt.shape[-1] != 3:
        raise ParameterError("expected (N, J, 3) or (J, 3) positions")
    return gt, est


def rmse(gt_sets, est_sets):
    """Per-sample sqrt of the mean joint distance, averaged over samples (mm).

    The square root is applied to mean Euclidean distances, not to mean
    squared distances; see ``joint_rmse`` for the textbook form.
    """
    gt, est = _matched(gt_sets, est_sets)
    d = np.linalg.norm(gt - est, axis=-1) * 1000.0
    return float(np.mean(np.sqrt(np.mean(d, axis=1))))


def joint_rmse(gt_sets, est_sets):
    """Textbook root-mean-square joint distance over all samples and joints (mm)."""
    gt, est = _matched(gt_sets, est_sets)
    return float(np.sqrt(np.mean(np.sum((gt - est) ** 2, axis=-1)))) * 1000.0


def pck(gt, est, tau_mm):
    """Percent of joints strictly closer than tau, averaged per sample then over samples."""
    if tau_mm <= 0:
        raise ParameterError("tau must be positive")
    g, e = _matched(gt, est)
    d = np.linalg.norm(g - e, axis=-1) * 1000.0
    return float(np.mean(np.mean(d < tau_mm, axis=1)) * 100.0)


def _as_rotations(R):
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise ParameterError("rotations must be (..., 3, 3)")
    eye = np.eye(3)
    if not (np.allclose(np.swapaxes(R, -1, -2) @ R, eye, atol=1e-6)
            and np.allclose(np.linalg.det(R), 1.0, atol=1e-6)):
        raise ParameterError("input contains a non-rotation matrix")
    return R


def geodesic_angles(gt_rotations, est_rotations):
    """Per-element rotation angle of R_gt^T R_est, in radians."""
    a, b = _as_rotations(gt_rotations), _as_rotations(est_rotations)
    if a.shape != b.shape:
        raise ParameterError("shape mismatch")
    M = np.swapaxes(a, -1, -2) @ b
    cos_t = (np.trace(M, axis1=-2, axis2=-1) - 1.0) / 2.0
    v = np.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]], -1)
    # atan2 keeps full precision near 0 and pi, where arccos does not
    return np.arctan2(0.5 * np.linalg.norm(v, axis=-1), cos_t)


def mae_geodesic(gt_rotations, est_rotations):
    """Mean geodesic distance between joint rotations, in degrees."""
    return float(np.degrees(np.mean(geodesic_angles(gt_rotations, est_rotations))))


def rmse3(rmse_mm, pck3_fraction):
    if not 0.0 <= pck3_fraction <= 1.0:
        raise ParameterError("PCK3 must be a fraction in [0, 1] here")
    return (1.0 - pck3_fraction) * rmse_mm


def synthesis(fid, div):
    """FID / DIV; NaN (undefined) when the diversity is zero."""
    if div == 0:
        return math.nan
    return fid / div


@dataclass
class EvalReport:
    rmse: float
    pck1: float
    pck3: float
    pck7: float
    mae: float | None = None
    div: float | None = None
    fid: float | None = None
    rmse3: float | None = None
    synthesis: float | None = None
    synthesis_undefined: bool = False

    def __post_init__(self):
        if self.rmse < 0:
            raise ParameterError("rmse must be non-negative")
        for v in (self.pck1, self.pck3, self.pck7):
            if not 0.0 <= v <= 100.0:
                raise ParameterError("pck values are percentages in [0, 100]")

    def to_dict(self):
        return asdict(self)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.to_dict()), lineterminator="\n")
        w.writeheader()
        w.writerow(self.to_dict())
        return buf.getvalue()


def indicators(report):
    """Fill in (rmse3, synthesis) from a report's base metrics; returns the pair."""
    report.rmse3 = rmse3(report.rmse, report.pck3 / 100.0)
    if report.fid is not None and report.div is not None:
        report.synthesis = synthesis(report.fid, report.div)
        report.synthesis_undefined = math.isnan(report.synthesis)
    return report.rmse3, report.synthesis


def evaluate(gt_joints, est_joints, gt_rotations=None, est_rotations=None, fid=None, div=None):
    """Full report for matched joint sets (meters) and optional joint rotations."""
    rep = EvalReport(
        rmse=rmse(gt_joints, est_joints),
        pck1=pck(gt_joints, est_joints, PCK_THRESHOLDS_MM[0]),
        pck3=pck(gt_joints, est_joints, PCK_THRESHOLDS_MM[1]),
        pck7=pck(gt_joints, est_joints, PCK_THRESHOLDS_MM[2]),
        mae=None if gt_rotations is None else mae_geodesic(gt_rotations, est_rotations),
        fid=fid, div=div,
    )
    indicators(rep)
    return rep

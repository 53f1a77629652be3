"""Evaluation metrics: MPJPE, Procrustes (Umeyama) alignment, and the
percentage-of-correct-vertices curve."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MetricsError(Exception):
    pass


def mpjpe(pred, gt) -> float:
    """Mean Euclidean distance per point, in the input units."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricsError(f"point count mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def procrustes_align(pred, gt, with_scale: bool = True):
    """Closed-form similarity transform minimizing ||s R p + t - g||^2.

    Umeyama's solution with det(R) = +1 enforced, so reflections are never
    introduced. Returns (aligned points, (s, R, t)).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise MetricsError("procrustes needs two equal n x 3 point sets")
    n = len(pred)
    if n < 3:
        raise MetricsError("procrustes needs at least 3 points")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    xp = pred - mu_p
    xg = gt - mu_g
    for name, x in (("pred", xp), ("gt", xg)):
        sv = np.linalg.svd(x, compute_uv=False)
        if sv[1] <= 1e-12 * max(sv[0], 1e-300):
            raise MetricsError(f"degenerate (rank-deficient) {name} point set")
    cov = xg.T @ xp / n
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    flip = np.ones(3)
    flip[-1] = d
    rot = u @ np.diag(flip) @ vt
    if with_scale:
        var_p = (xp ** 2).sum() / n
        scale = float((s * flip).sum() / var_p)
    else:
        scale = 1.0
    t = mu_g - scale * rot @ mu_p
    aligned = scale * pred @ rot.T + t
    return aligned, (scale, rot, t)


def aligned_mpjpe(pred, gt, with_scale: bool = True) -> float:
    aligned, _ = procrustes_align(pred, gt, with_scale=with_scale)
    return mpjpe(aligned, gt)


def pcv_curve(per_vertex_errors, thresholds):
    """Fraction of errors at or below each threshold, as (threshold, frac)."""
    errors = np.asarray(per_vertex_errors, dtype=np.float64)
    if errors.size == 0:
        raise MetricsError("empty error list")
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise MetricsError("thresholds must be sorted ascending")
    return [(float(t), float(np.mean(errors <= t))) for t in thresholds]


def write_pcv_csv(path, curve):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold_mm", "fraction"])
        for t, frac in curve:
            writer.writerow([f"{t:.6g}", f"{frac:.6g}"])


@dataclass
class MetricReport:
    """Aligned and non-aligned errors per part, plus the PCV curve."""

    mpjpe_parts: dict = field(default_factory=dict)
    aligned_mpjpe_parts: dict = field(default_factory=dict)
    vertex_error_parts: dict = field(default_factory=dict)
    aligned_vertex_error_parts: dict = field(default_factory=dict)
    pcv: list = field(default_factory=list)
    units: str = "mm"

    def to_json(self) -> dict:
        return {
            "units": self.units,
            "pose_error": self.mpjpe_parts,
            "pose_error_aligned": self.aligned_mpjpe_parts,
            "vertex_error": self.vertex_error_parts,
            "vertex_error_aligned": self.aligned_vertex_error_parts,
            "pcv": [{"threshold": t, "fraction": f} for t, f in self.pcv],
        }

    def save(self, directory, stem: str = "report"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / f"{stem}.json", "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
        if self.pcv:
            write_pcv_csv(directory / f"{stem}_pcv.csv", self.pcv)

"""Camera projection, photometric self-supervision, and the combined
reconstruction loss (pose MSE + shape MSE + optional photometric term)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, gather_rows


class LossError(Exception):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise LossError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise LossError("principal point must lie inside the image")

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_json(cls, obj) -> "CameraIntrinsics":
        return cls(obj["fx"], obj["fy"], obj["cx"], obj["cy"], obj["width"], obj["height"])


def project_points(points, intr: CameraIntrinsics, eps: float = 1e-6):
    """Perspective projection of camera-space points to pixels.

    Returns (uv, visible): points behind the camera (z <= eps) or outside
    the image bounds are masked invisible, never an error.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = p[:, 2]
    safe_z = np.where(np.abs(z) > eps, z, 1.0)
    u = intr.fx * p[:, 0] / safe_z + intr.cx
    v = intr.fy * p[:, 1] / safe_z + intr.cy
    uv = np.stack([u, v], axis=1)
    visible = (z > eps) & (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
    return uv, visible


def bilinear_sample(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample an H x W x C image at continuous pixel coordinates (u, v),
    with pixel centers at integer coordinates."""
    h, w = image.shape[:2]
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    top = image[v0, u0] * (1 - fu) + image[v0, u1] * fu
    bot = image[v1, u0] * (1 - fu) + image[v1, u1] * fu
    return top * (1 - fv) + bot * fv


def photometric_loss(image, intr: CameraIntrinsics, verts_cam, rgb_pred) -> Tensor:
    """MSE between predicted per-vertex colors and the image colors sampled
    at the projected ground-truth vertices; visible vertices only.

    Differentiable w.r.t. rgb_pred. Returns zero when nothing projects
    into the image.
    """
    rgb = rgb_pred if isinstance(rgb_pred, Tensor) else Tensor(rgb_pred)
    verts_cam = np.asarray(verts_cam, dtype=np.float64).reshape(-1, 3)
    if rgb.shape[0] != len(verts_cam):
        raise LossError(
            f"rgb_pred rows {rgb.shape[0]} != vertex count {len(verts_cam)}")
    uv, visible = project_points(verts_cam, intr)
    if not visible.any():
        warnings.warn("photometric loss: no visible vertices", RuntimeWarning)
        return Tensor(0.0)
    idx = np.where(visible)[0]
    target = bilinear_sample(np.asarray(image, dtype=np.float64), uv[idx])
    return T.mse(gather_rows(rgb, idx), Tensor(target))


def pose_loss(pred, gt) -> Tensor:
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    return T.mse(pred, gt if isinstance(gt, Tensor) else Tensor(gt))


def combined_loss(pred_pose, gt_pose, pred_shape, gt_shape, photo_inputs=None,
                  part_slices=None, weights=None):
    """Total reconstruction loss and its per-term breakdown.

    Terms are summed unweighted unless `weights` overrides (pose, shape,
    photo). `photo_inputs`, when texture is enabled, is a dict with keys
    image, intrinsics, verts_cam, rgb_pred. The breakdown also reports
    per-part squared errors when `part_slices` (name -> slice) is given.
    """
    weights = weights or {}
    terms = {}
    terms["pose"] = pose_loss(pred_pose, gt_pose)
    terms["shape"] = pose_loss(pred_shape, gt_shape)
    if photo_inputs is not None:
        terms["photo"] = photometric_loss(
            photo_inputs["image"], photo_inputs["intrinsics"],
            photo_inputs["verts_cam"], photo_inputs["rgb_pred"])
    total = None
    for name, term in terms.items():
        w = float(weights.get(name, 1.0))
        piece = w * term if w != 1.0 else term
        total = piece if total is None else total + piece
    breakdown = {name: float(term.data) for name, term in terms.items()}
    if part_slices:
        pp = np.asarray(pred_pose.data if isinstance(pred_pose, Tensor) else pred_pose)
        gp = np.asarray(gt_pose.data if isinstance(gt_pose, Tensor) else gt_pose)
        ps = np.asarray(pred_shape.data if isinstance(pred_shape, Tensor) else pred_shape)
        gs = np.asarray(gt_shape.data if isinstance(gt_shape, Tensor) else gt_shape)
        for name, sl in part_slices.get("pose", {}).items():
            breakdown[f"pose/{name}"] = float(np.mean((pp[..., sl, :] - gp[..., sl, :]) ** 2))
        for name, sl in part_slices.get("shape", {}).items():
            breakdown[f"shape/{name}"] = float(np.mean((ps[..., sl, :3] - gs[..., sl, :3]) ** 2))
    return total, breakdown

"""Synthetic dataset generation and the feature-provider abstraction.

Stands in for the out-of-scope keypoint detector: every sample carries a
smooth synthetic image, camera intrinsics, palm-origin 3D ground truth
(pose and template-topology meshes), consistent 2D projections, and
detector-style per-node inputs (heatmaps rendered inside part bounding
boxes plus a per-part feature vector from a fixed random projection of
the image crop).

Scene units are millimeter-equivalent: templates are unit scale, so one
synthetic unit plays the role the millimeter plays on the real datasets.
Generation is pure per (seed, index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import CameraIntrinsics, bilinear_sample, project_points
from .mesh import Mesh
from .rng import Rng
from .templates import TemplateSet, load_templates

HEATMAP_SIZE = 56
DEFAULT_INTRINSICS = CameraIntrinsics(fx=240.0, fy=240.0, cx=128.0, cy=128.0,
                                      width=256, height=256)
FEATURE_WIDTHS = (1024, 2048, 4096)
MODALITIES = ("heatmap", "pose2d", "pose3d")


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class PartLayout:
    """Node/vertex bookkeeping for 1-hand or 2-hand scenes.

    Parts are ordered hands first, object last. In 1-hand mode the hand
    and object share one detection box; in 2-hand mode every part has its
    own box.
    """

    hands: int

    def __post_init__(self):
        if self.hands not in (1, 2):
            raise SynthError(f"hands must be 1 or 2, got {self.hands}")

    @property
    def part_names(self):
        hands = ["hand"] if self.hands == 1 else ["left_hand", "right_hand"]
        return hands + ["object"]

    @property
    def num_joints(self) -> int:
        return 21 * self.hands + 8

    @property
    def num_vertices(self) -> int:
        return 778 * self.hands + 1000

    def joint_slices(self) -> dict:
        out = {}
        start = 0
        for name in self.part_names:
            n = 8 if name == "object" else 21
            out[name] = slice(start, start + n)
            start += n
        return out

    def vertex_slices(self, hand_count: int = 778, object_count: int = 1000) -> dict:
        out = {}
        start = 0
        for name in self.part_names:
            n = object_count if name == "object" else hand_count
            out[name] = slice(start, start + n)
            start += n
        return out

    def bbox_groups(self) -> list:
        """(group name, joint slice) pairs; one shared box in 1-hand mode."""
        if self.hands == 1:
            return [("scene", slice(0, self.num_joints))]
        return list(self.joint_slices().items())


@dataclass
class SynthConfig:
    hands: int = 1
    image_mode: str = "sinusoid"  # or "ramp"
    heatmap_sigma: float = 2.0
    heatmap_noise: float = 0.0
    bbox_margin: float = 0.1
    feature_width: int = 2048

    def __post_init__(self):
        if self.image_mode not in ("sinusoid", "ramp"):
            raise SynthError(f"unknown image_mode '{self.image_mode}'")
        if self.feature_width not in FEATURE_WIDTHS:
            raise SynthError(f"feature_width must be one of {FEATURE_WIDTHS}")

    @property
    def layout(self) -> PartLayout:
        return PartLayout(self.hands)


@dataclass
class Sample:
    index: int
    layout: PartLayout
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    intrinsics: CameraIntrinsics
    palm_camera_t: np.ndarray  # camera-space palm position (3,)
    gt_pose_3d: np.ndarray  # (K, 3) palm-origin
    gt_pose_2d: np.ndarray  # (K, 2) pixels
    gt_mesh_vertices: np.ndarray  # (V, 3) palm-origin, parts concatenated
    heatmaps: np.ndarray | None = None  # (K, 56, 56)
    roi_features: np.ndarray | None = None  # (K, F)
    pose2d_est: np.ndarray | None = None  # (K, 2) decoded from heatmaps

    def verts_camera(self) -> np.ndarray:
        return self.gt_mesh_vertices + self.palm_camera_t


def palm_normalize(pose_3d, meshes, palm_index: int = 0):
    """Translate pose and meshes so the palm joint sits at the origin."""
    pose = np.asarray(pose_3d, dtype=np.float64)
    origin = pose[palm_index].copy()
    shifted_meshes = [np.asarray(m, dtype=np.float64) - origin for m in meshes]
    return pose - origin, shifted_meshes, origin


def bbox_from_pose2d(pose_2d, margin: float = 0.0):
    """Coordinate-wise min/max box, optionally padded by a relative margin
    (with a 1 px floor so degenerate boxes become valid)."""
    p = np.asarray(pose_2d, dtype=np.float64).reshape(-1, 2)
    if len(p) < 1:
        raise SynthError("bbox needs at least one keypoint")
    x0, y0 = p.min(axis=0)
    x1, y1 = p.max(axis=0)
    if margin > 0:
        pad_x = max(margin * (x1 - x0), 1.0)
        pad_y = max(margin * (y1 - y0), 1.0)
        x0, x1 = x0 - pad_x, x1 + pad_x
        y0, y1 = y0 - pad_y, y1 + pad_y
    return float(x0), float(y0), float(x1), float(y1)


def gaussian_heatmap(pose_2d, bbox, sigma: float = 2.0, size: int = HEATMAP_SIZE) -> np.ndarray:
    """Per-keypoint Gaussian bumps on the box-local grid, peak exactly 1.

    The Gaussian center keeps the keypoint's sub-cell position, so the
    map carries finer information than its own argmax.
    """
    x0, y0, x1, y1 = bbox
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise SynthError(f"degenerate bbox {bbox}")
    if sigma <= 0:
        raise SynthError("sigma must be positive")
    p = np.asarray(pose_2d, dtype=np.float64).reshape(-1, 2)
    gx = (p[:, 0] - x0) / w * size
    gy = (p[:, 1] - y0) / h * size
    cells = np.arange(size, dtype=np.float64)
    dx2 = (cells[None, None, :] - gx[:, None, None]) ** 2
    dy2 = (cells[None, :, None] - gy[:, None, None]) ** 2
    d2 = dx2 + dy2
    # peak-normalize in log space: exact 1 at the nearest cell, and the
    # sigma -> 0 limit degrades to a one-hot map instead of underflowing
    d2min = d2.reshape(len(p), -1).min(axis=1)
    maps = np.exp(-(d2 - d2min[:, None, None]) / (2.0 * sigma * sigma))
    inside = (gx >= 0) & (gx <= size) & (gy >= 0) & (gy <= size)
    maps[~inside] = 0.0
    return maps


def decode_heatmap(maps, bbox, size: int = HEATMAP_SIZE) -> np.ndarray:
    """Argmax cell mapped back to pixels; inverse of gaussian_heatmap up to
    one grid cell."""
    x0, y0, x1, y1 = bbox
    flat = maps.reshape(len(maps), -1).argmax(axis=1)
    rows = flat // size
    cols = flat % size
    u = x0 + cols / size * (x1 - x0)
    v = y0 + rows / size * (y1 - y0)
    return np.stack([u, v], axis=1)


# ---------------------------------------------------------------------------
# scene assembly


def _random_rotation(rng: Rng, max_angle: float) -> np.ndarray:
    axis = np.asarray(rng.normal((3,)))
    axis /= np.linalg.norm(axis)
    angle = float(rng.uniform((), 0.0, max_angle))
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def _warp_field(rng: Rng, amplitude: float = 0.05, freq_std: float = 1.0):
    amps = np.asarray(rng.normal((3, 3), std=amplitude))
    freqs = np.asarray(rng.normal((3, 3), std=freq_std))
    phases = np.asarray(rng.uniform((3,), 0, 2 * np.pi))

    def warp(x):
        out = x.copy()
        for k in range(3):
            out = out + amps[k] * np.sin(x @ freqs[k] + phases[k])[:, None]
        return out

    return warp


def _radial_bump_field(rng: Rng, max_total: float = 0.35):
    raw = np.asarray(rng.uniform((3,), 0.03, 0.15))
    scale = min(1.0, max_total / raw.sum())
    amps = raw * scale
    dirs = np.asarray(rng.normal((3, 3)))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freqs = np.asarray(rng.uniform((3,), 1.0, 3.0))
    phases = np.asarray(rng.uniform((3,), 0, 2 * np.pi))

    def bump(unit_dirs):
        factor = np.ones(len(unit_dirs))
        for k in range(3):
            factor = factor + amps[k] * np.sin(freqs[k] * unit_dirs @ dirs[k] + phases[k])
        return factor

    return bump


def _synth_image(rng: Rng, mode: str, intr: CameraIntrinsics) -> np.ndarray:
    h, w = intr.height, intr.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    if mode == "ramp":
        img = np.stack([uu / (w - 1.0), np.full_like(uu, 0.5), np.full_like(uu, 0.5)], axis=2)
        return img.astype(np.float32)
    img = np.full((h, w, 3), 0.5)
    for c in range(3):
        raw = np.asarray(rng.uniform((3,), 0.05, 0.25))
        amps = raw * min(1.0, 0.45 / raw.sum())
        for k in range(3):
            wavelength = float(rng.uniform((), 60.0, 400.0))
            theta = float(rng.uniform((), 0.0, 2 * np.pi))
            phase = float(rng.uniform((), 0.0, 2 * np.pi))
            omega = 2 * np.pi / wavelength
            img[:, :, c] += amps[k] * np.sin(
                omega * (np.cos(theta) * uu + np.sin(theta) * vv) + phase)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _box_corners(verts: np.ndarray) -> np.ndarray:
    """Axis-aligned bounding box corners ordered by (x, y, z) min/max bits,
    matching the box skeleton's edge convention."""
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    return np.array([[(lo, hi)[bx][0], (lo, hi)[by][1], (lo, hi)[bz][2]]
                     for bx in (0, 1) for by in (0, 1) for bz in (0, 1)])


def generate_sample(seed: int, index: int, config: SynthConfig,
                    templates: TemplateSet | None = None,
                    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS) -> Sample:
    """Deterministic scene for (seed, index): warped hand template(s) and a
    radially deformed object sphere, placed in the camera frustum."""
    templates = templates or load_templates()
    layout = config.layout
    rng = Rng(seed).child(("sample", index))

    joints_parts = []
    mesh_parts = []
    if layout.hands == 1:
        hand_centers = [np.array([-0.35, 0.0, 0.0])]
        obj_center = np.array([0.75, 0.05, 0.25])
        depth = float(rng.uniform((), 4.8, 6.2))
    else:
        hand_centers = [np.array([-0.85, 0.0, 0.0]), np.array([0.85, 0.1, 0.1])]
        obj_center = np.array([0.0, -0.1, 0.45])
        depth = float(rng.uniform((), 5.6, 7.0))
    scene_jitter = np.append(np.asarray(rng.uniform((2,), -0.2, 0.2)), depth)

    for h, center in enumerate(hand_centers):
        hrng = rng.child(("hand", h))
        warp = _warp_field(hrng.child("warp"))
        rot = _random_rotation(hrng.child("rot"), max_angle=np.deg2rad(40.0))
        offset = center + scene_jitter
        joints = warp(templates.hand_joints) @ rot.T + offset
        verts = warp(templates.hand.vertices) @ rot.T + offset
        joints_parts.append(joints)
        mesh_parts.append(verts)

    orng = rng.child("object")
    bump = _radial_bump_field(orng.child("bumps"))
    sphere = templates.object_sphere.vertices
    radii = np.linalg.norm(sphere, axis=1)
    dirs = sphere / radii[:, None]
    scale = float(orng.uniform((), 0.35, 0.55))
    obj_local = dirs * (radii * bump(dirs) * scale)[:, None]
    rot = _random_rotation(orng.child("rot"), max_angle=np.pi)
    obj_verts = obj_local @ rot.T + obj_center + scene_jitter
    corners = _box_corners(obj_verts)

    joints_cam = np.concatenate(joints_parts + [corners], axis=0)
    verts_cam = np.concatenate(mesh_parts + [obj_verts], axis=0)

    gt_pose_2d, visible = project_points(joints_cam, intrinsics)
    if not visible.all():
        raise SynthError(f"sample {index}: keypoints left the frustum")

    pose_3d, (mesh_shifted,), palm = palm_normalize(joints_cam, [verts_cam])
    image = _synth_image(rng.child("image"), config.image_mode, intrinsics)

    return Sample(index=index, layout=layout, image=image, intrinsics=intrinsics,
                  palm_camera_t=palm, gt_pose_3d=pose_3d, gt_pose_2d=gt_pose_2d,
                  gt_mesh_vertices=mesh_shifted)


def synth_generate(seed: int, config: SynthConfig, count: int,
                   templates: TemplateSet | None = None, start: int = 0):
    templates = templates or load_templates()
    for i in range(start, start + count):
        yield generate_sample(seed, i, config, templates)


# ---------------------------------------------------------------------------
# feature provider


class SyntheticFeatureProvider:
    """Detector stand-in: heatmaps plus RoI-style features.

    The feature vector of a part is a fixed seeded random projection of
    the part's 32 x 32 grayscale image crop, replicated to each of the
    part's nodes; the estimated 2D pose is decoded from the heatmaps at
    cell precision, exactly as a detection stage would emit it.

    The projection seed plays the role of the detector's (frozen) weights:
    it must be shared across train and eval streams, so it defaults to a
    constant rather than the dataset seed.
    """

    def __init__(self, feature_width: int = 2048, seed: int = 0,
                 sigma: float = 2.0, noise: float = 0.0, margin: float = 0.1):
        if feature_width not in FEATURE_WIDTHS:
            raise SynthError(f"feature_width must be one of {FEATURE_WIDTHS}")
        self.feature_width = feature_width
        self.sigma = sigma
        self.noise = noise
        self.margin = margin
        self.seed = seed
        rng = Rng(seed).child(("roi_proj", feature_width))
        self.projection = np.asarray(
            rng.normal((32 * 32, feature_width), std=1.0 / 32.0))

    def _crop_gray(self, image, bbox) -> np.ndarray:
        x0, y0, x1, y1 = bbox
        grid = np.linspace(0.0, 1.0, 32)
        us = x0 + grid * (x1 - x0)
        vs = y0 + grid * (y1 - y0)
        uu, vv = np.meshgrid(us, vs)
        uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
        rgb = bilinear_sample(np.asarray(image, dtype=np.float64), uv)
        return rgb.mean(axis=1)

    def apply(self, sample: Sample) -> Sample:
        layout = sample.layout
        k = layout.num_joints
        heatmaps = np.zeros((k, HEATMAP_SIZE, HEATMAP_SIZE))
        roi = np.zeros((k, self.feature_width))
        pose_est = np.zeros((k, 2))
        nrng = Rng(self.seed).child(("heatmap_noise", sample.index))
        for name, sl in layout.bbox_groups():
            box = bbox_from_pose2d(sample.gt_pose_2d[sl], margin=self.margin)
            maps = gaussian_heatmap(sample.gt_pose_2d[sl], box, sigma=self.sigma)
            if self.noise > 0:
                maps = np.clip(maps + nrng.normal(maps.shape, std=self.noise), 0.0, 1.0)
            heatmaps[sl] = maps
            pose_est[sl] = decode_heatmap(maps, box)
            feat = self._crop_gray(sample.image, box) @ self.projection
            roi[sl] = feat[None, :]
        sample.heatmaps = heatmaps
        sample.roi_features = roi
        sample.pose2d_est = pose_est
        return sample


def modality_features(sample: Sample, modality: str, include_roi: bool = True) -> np.ndarray:
    """Per-node network inputs for one graph input modality."""
    if modality == "heatmap":
        base = sample.heatmaps.reshape(sample.layout.num_joints, -1)
    elif modality == "pose2d":
        intr = sample.intrinsics
        norm = np.array([intr.width - 1.0, intr.height - 1.0])
        base = sample.pose2d_est / norm * 2.0 - 1.0
    elif modality == "pose3d":
        base = sample.gt_pose_3d
    else:
        raise SynthError(f"unknown modality '{modality}'")
    if not include_roi:
        return base.copy()
    return np.concatenate([base, sample.roi_features], axis=1)


def modality_width(modality: str, feature_width: int, include_roi: bool = True) -> int:
    base = {"heatmap": HEATMAP_SIZE * HEATMAP_SIZE, "pose2d": 2, "pose3d": 3}[modality]
    return base + (feature_width if include_roi else 0)


class SynthDataset:
    """Lazy, cached sample stream with provider features attached."""

    def __init__(self, seed: int, config: SynthConfig, count: int,
                 templates: TemplateSet | None = None, provider=None, start: int = 0):
        self.seed = seed
        self.config = config
        self.count = count
        self.start = start
        self.templates = templates or load_templates()
        # the provider models a frozen detector: its seed is a constant,
        # never the dataset seed, so every stream sees the same projection
        self.provider = provider or SyntheticFeatureProvider(
            feature_width=config.feature_width, seed=0, sigma=config.heatmap_sigma,
            noise=config.heatmap_noise, margin=config.bbox_margin)
        self._cache: dict[int, Sample] = {}
        self._feature_cache: dict[tuple, np.ndarray] = {}

    def __len__(self):
        return self.count

    def sample(self, i: int) -> Sample:
        if i not in self._cache:
            if not 0 <= i < self.count:
                raise IndexError(i)
            s = generate_sample(self.seed, self.start + i, self.config, self.templates)
            self._cache[i] = self.provider.apply(s)
        return self._cache[i]

    def features(self, i: int, modality: str, include_roi: bool = True) -> np.ndarray:
        key = (i, modality, include_roi)
        if key not in self._feature_cache:
            self._feature_cache[key] = modality_features(self.sample(i), modality, include_roi)
        return self._feature_cache[key]

    def batch_features(self, indices, modality: str, include_roi: bool = True) -> np.ndarray:
        return np.stack([self.features(i, modality, include_roi) for i in indices])

    def batch_pose(self, indices) -> np.ndarray:
        return np.stack([self.sample(i).gt_pose_3d for i in indices])

    def batch_mesh(self, indices) -> np.ndarray:
        return np.stack([self.sample(i).gt_mesh_vertices for i in indices])

"""Dataset interchange: THR1 sample files plus a JSON manifest.

This is the `files` feature provider: externally computed detector
outputs (heatmaps, RoI features, estimated 2D pose) are read from disk
instead of the synthetic provider. Ground-truth fields are optional so
the same format serves training, evaluation and pure inference.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import thr1
from .losses import CameraIntrinsics
from .synth import PartLayout, Sample, SynthDataset, modality_features

MANIFEST_FORMAT = "thor-dataset-v1"


class DataError(Exception):
    pass


def export_dataset(dataset: SynthDataset, directory, count: int | None = None,
                   include_gt: bool = True, include_image: bool = True) -> Path:
    """Write samples as THR1 tensors plus manifest.json; returns the path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count = count if count is not None else len(dataset)
    entries = []
    for i in range(count):
        s = dataset.sample(i)
        stem = f"sample{i:05d}"
        entry = {}

        def put(name, array):
            fname = f"{stem}_{name}.thr1"
            thr1.write_tensor(directory / fname, np.asarray(array, dtype=np.float64))
            entry[name] = fname

        put("heatmaps", s.heatmaps)
        put("roi_features", s.roi_features)
        put("pose2d_est", s.pose2d_est)
        put("palm_camera_t", s.palm_camera_t)
        if include_image:
            put("image", s.image)
        if include_gt:
            put("gt_pose_3d", s.gt_pose_3d)
            put("gt_pose_2d", s.gt_pose_2d)
            put("gt_mesh_vertices", s.gt_mesh_vertices)
        entries.append(entry)
    manifest = {
        "format": MANIFEST_FORMAT,
        "hands": dataset.config.hands,
        "feature_width": dataset.provider.feature_width,
        "intrinsics": dataset.sample(0).intrinsics.to_json(),
        "samples": entries,
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return directory / "manifest.json"


class FileDataset:
    """Reads a THR1 dataset manifest; mirrors SynthDataset's access API."""

    def __init__(self, manifest_path):
        self.root = Path(manifest_path).parent
        try:
            with open(manifest_path) as fh:
                self.manifest = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read manifest {manifest_path}: {e}") from None
        if self.manifest.get("format") != MANIFEST_FORMAT:
            raise DataError(f"unknown dataset format {self.manifest.get('format')!r}")
        self.layout = PartLayout(self.manifest["hands"])
        self.feature_width = int(self.manifest["feature_width"])
        self.intrinsics = CameraIntrinsics.from_json(self.manifest["intrinsics"])
        self._cache: dict[int, Sample] = {}

    def __len__(self):
        return len(self.manifest["samples"])

    def _load(self, entry, name, required=False):
        if name not in entry:
            if required:
                raise DataError(f"manifest entry missing '{name}'")
            return None
        return thr1.read_tensor(self.root / entry[name])

    def sample(self, i: int) -> Sample:
        if i not in self._cache:
            entry = self.manifest["samples"][i]
            heatmaps = self._load(entry, "heatmaps", required=True)
            k = self.layout.num_joints
            if heatmaps.shape[0] != k:
                raise DataError(
                    f"sample {i}: {heatmaps.shape[0]} heatmaps for a {k}-joint layout")
            roi = self._load(entry, "roi_features", required=True)
            image = self._load(entry, "image")
            self._cache[i] = Sample(
                index=i, layout=self.layout,
                image=image if image is not None else np.zeros(
                    (self.intrinsics.height, self.intrinsics.width, 3), dtype=np.float32),
                intrinsics=self.intrinsics,
                palm_camera_t=self._load(entry, "palm_camera_t", required=True),
                gt_pose_3d=self._load(entry, "gt_pose_3d"),
                gt_pose_2d=self._load(entry, "gt_pose_2d"),
                gt_mesh_vertices=self._load(entry, "gt_mesh_vertices"),
                heatmaps=heatmaps, roi_features=roi,
                pose2d_est=self._load(entry, "pose2d_est"))
        return self._cache[i]

    def require_ground_truth(self):
        s = self.sample(0)
        if s.gt_pose_3d is None or s.gt_mesh_vertices is None:
            raise DataError("dataset manifest carries no ground truth")

    def features(self, i: int, modality: str, include_roi: bool = True):
        return modality_features(self.sample(i), modality, include_roi)

    def batch_features(self, indices, modality: str, include_roi: bool = True):
        return np.stack([self.features(i, modality, include_roi) for i in indices])

    def batch_pose(self, indices):
        return np.stack([self.sample(i).gt_pose_3d for i in indices])

    def batch_mesh(self, indices):
        return np.stack([self.sample(i).gt_mesh_vertices for i in indices])

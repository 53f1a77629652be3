"""Canonical template meshes and their decimation ladders.

The hand template is the procedural 778-vertex toy hand; the object
template is the level-4 icosphere simplified to 1000 vertices. Both are
decimated down the coarse-to-fine ladder (hand 778/194/49, object
1000/256/64). Building them costs tens of seconds, so results are cached
under $THOR_CACHE (default ~/.cache/thor) in the THR1 tensor format.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import thr1
from .mesh import Mesh, hand_joint_positions, icosphere, toy_hand_mesh
from .qecd import qecd_simplify

HAND_LEVELS = (49, 194, 778)
OBJECT_LEVELS = (64, 256, 1000)
_CACHE_VERSION = "templates-v1"


def cache_dir() -> Path:
    return Path(os.environ.get("THOR_CACHE", "~/.cache/thor")).expanduser()


@dataclass
class TemplateSet:
    hand_levels: tuple  # Mesh ladder, coarse to fine (49, 194, 778)
    object_levels: tuple  # Mesh ladder, coarse to fine (64, 256, 1000)
    hand_joints: np.ndarray  # (21, 3) canonical joints inside the hand

    @property
    def hand(self) -> Mesh:
        return self.hand_levels[-1]

    @property
    def object_sphere(self) -> Mesh:
        return self.object_levels[-1]


def _save_mesh(directory: Path, name: str, mesh: Mesh):
    thr1.write_tensor(directory / f"{name}_v.thr1", mesh.vertices)
    thr1.write_tensor(directory / f"{name}_f.thr1", mesh.faces.astype(np.float64))


def _load_mesh(directory: Path, name: str) -> Mesh:
    verts = thr1.read_tensor(directory / f"{name}_v.thr1")
    faces = thr1.read_tensor(directory / f"{name}_f.thr1").astype(np.int64)
    return Mesh(verts, faces)


def build_templates(seed: int = 0) -> TemplateSet:
    hand = toy_hand_mesh(seed=seed)
    hand_194 = qecd_simplify(hand, 194)
    hand_49 = qecd_simplify(hand_194, 49)
    sphere = qecd_simplify(icosphere(4), 1000)
    obj_256 = qecd_simplify(sphere, 256)
    obj_64 = qecd_simplify(obj_256, 64)
    return TemplateSet(
        hand_levels=(hand_49, hand_194, hand),
        object_levels=(obj_64, obj_256, sphere),
        hand_joints=hand_joint_positions(),
    )


def load_templates(seed: int = 0, cache: Path | None = None) -> TemplateSet:
    """Load the template set from cache, building (and caching) on miss."""
    root = (cache or cache_dir()) / f"{_CACHE_VERSION}-seed{seed}"
    names = [f"hand{n}" for n in HAND_LEVELS] + [f"object{n}" for n in OBJECT_LEVELS]
    try:
        if (root / "hand_joints.thr1").exists():
            meshes = {name: _load_mesh(root, name) for name in names}
            joints = thr1.read_tensor(root / "hand_joints.thr1")
            return TemplateSet(
                hand_levels=tuple(meshes[f"hand{n}"] for n in HAND_LEVELS),
                object_levels=tuple(meshes[f"object{n}"] for n in OBJECT_LEVELS),
                hand_joints=joints,
            )
    except (thr1.FormatError, OSError):
        pass  # stale or corrupt cache: rebuild below
    templates = build_templates(seed=seed)
    root.mkdir(parents=True, exist_ok=True)
    for n, mesh in zip(HAND_LEVELS, templates.hand_levels):
        _save_mesh(root, f"hand{n}", mesh)
    for n, mesh in zip(OBJECT_LEVELS, templates.object_levels):
        _save_mesh(root, f"object{n}", mesh)
    thr1.write_tensor(root / "hand_joints.thr1", templates.hand_joints)
    return templates

"""Coarse-to-fine shape generation: graph-transformer stages alternating
with trainable unpooling layers, growing the graph from pose resolution
to full mesh resolution, with an optional per-vertex RGB head.

Node order at every level is hands first, object last, and each level's
topology is the block-diagonal union of the per-part mesh graphs (the
input level uses the skeleton), so graph convolutions never mix parts;
attention and unpooling provide the cross-part paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from . import thr1
from .graformer import GraFormer, GraFormerConfig, Linear, Module, xavier
from .graphs import GraphTopology, adjacency_from_faces, block_diagonal, build_skeleton
from .rng import Rng
from .synth import PartLayout
from .templates import HAND_LEVELS, OBJECT_LEVELS, TemplateSet
from .tensor import Tensor


class PlanError(Exception):
    pass


@dataclass
class LevelSpec:
    part_counts: list  # (part name, node count) in node order
    topology: GraphTopology | None  # None on the final level (no stage runs there)
    part_faces: dict = field(default_factory=dict)  # per-part face arrays, part-local indices

    @property
    def total(self) -> int:
        return sum(n for _, n in self.part_counts)

    def part_slices(self) -> dict:
        out = {}
        start = 0
        for name, n in self.part_counts:
            out[name] = slice(start, start + n)
            start += n
        return out


@dataclass
class StagePlanConfig:
    """Everything needed to rebuild a plan deterministically."""

    hands: int = 1
    stages: int = 3
    input_dim: int = 5184
    widths: tuple = (512, 256, 128)
    textured: bool = False
    num_blocks: int = 2
    num_heads: int = 4
    cheb_order: int = 2
    use_attention: bool = True

    def to_json(self) -> dict:
        out = asdict(self)
        out["widths"] = list(self.widths)
        return out

    @classmethod
    def from_json(cls, obj) -> "StagePlanConfig":
        obj = dict(obj)
        obj["widths"] = tuple(obj["widths"])
        return cls(**obj)


class StagePlan:
    """Per-stage node counts, topologies and feature widths."""

    def __init__(self, layout: PartLayout, levels: list, widths, input_dim: int,
                 textured: bool, config: StagePlanConfig | None = None):
        if len(widths) != len(levels) - 1:
            raise PlanError(f"{len(levels)} levels need {len(levels) - 1} widths, got {len(widths)}")
        if any(b >= a for a, b in zip(widths, widths[1:])):
            raise PlanError(f"stage widths must strictly decrease, got {list(widths)}")
        if widths and widths[-1] <= 3:
            raise PlanError("last stage width must exceed the 3-coordinate output")
        for prev, nxt in zip(levels, levels[1:]):
            if nxt.total <= prev.total:
                raise PlanError(
                    f"level node counts must grow, got {prev.total} -> {nxt.total}")
        for lv in levels[:-1]:
            if lv.topology is None or lv.topology.num_nodes != lv.total:
                raise PlanError("every stage level needs a matching topology")
        self.layout = layout
        self.levels = levels
        self.widths = list(widths)
        self.input_dim = int(input_dim)
        self.textured = bool(textured)
        self.config = config

    @property
    def num_stages(self) -> int:
        return len(self.widths)

    @property
    def node_ladder(self) -> list:
        return [lv.total for lv in self.levels]

    @property
    def output_channels(self) -> int:
        return 6 if self.textured else 3

    def final_part_faces(self) -> dict:
        return self.levels[-1].part_faces

    def save(self, directory):
        """plan.json with level vertex counts plus face-file references."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        doc = {
            "hands": self.layout.hands,
            "input_dim": self.input_dim,
            "widths": self.widths,
            "textured": self.textured,
            "config": self.config.to_json() if self.config else None,
            "levels": [],
        }
        for li, lv in enumerate(self.levels):
            entry = {"part_counts": [[n, c] for n, c in lv.part_counts], "faces": {}}
            for part, faces in lv.part_faces.items():
                fname = f"level{li}_{part}_faces.thr1"
                thr1.write_tensor(directory / fname, np.asarray(faces, dtype=np.float64))
                entry["faces"][part] = fname
            doc["levels"].append(entry)
        with open(directory / "plan.json", "w") as fh:
            json.dump(doc, fh, indent=2)

    @classmethod
    def load(cls, directory) -> "StagePlan":
        directory = Path(directory)
        with open(directory / "plan.json") as fh:
            doc = json.load(fh)
        layout = PartLayout(doc["hands"])
        levels = []
        for li, entry in enumerate(doc["levels"]):
            part_counts = [(n, int(c)) for n, c in entry["part_counts"]]
            part_faces = {p: thr1.read_tensor(directory / f).astype(np.int64)
                          for p, f in entry["faces"].items()}
            if li == 0:
                topo = build_skeleton("composite", hands=doc["hands"]).topology
            elif li < len(doc["levels"]) - 1:
                topo = _level_topology(part_counts, part_faces)
            else:
                topo = None
            levels.append(LevelSpec(part_counts, topo, part_faces))
        cfg = StagePlanConfig.from_json(doc["config"]) if doc.get("config") else None
        return cls(layout, levels, doc["widths"], doc["input_dim"], doc["textured"], cfg)


def _level_topology(part_counts, part_faces) -> GraphTopology:
    graphs = []
    for name, count in part_counts:
        faces = part_faces[name]
        graphs.append(adjacency_from_faces(faces, count))
    return block_diagonal(graphs)


def build_stage_plan(templates: TemplateSet, config: StagePlanConfig) -> StagePlan:
    """Canonical plan from the template decimation ladders.

    Three stages use the full ladder; fewer stages drop the coarsest
    intermediate levels and still end at full mesh resolution.
    """
    layout = PartLayout(config.hands)
    if config.stages not in (1, 2, 3):
        raise PlanError(f"stages must be 1, 2 or 3, got {config.stages}")
    if len(config.widths) != config.stages:
        raise PlanError(f"{config.stages} stages need {config.stages} widths")
    for mesh, expect in zip(templates.hand_levels, HAND_LEVELS):
        if mesh.num_vertices != expect:
            raise PlanError(f"hand level has {mesh.num_vertices} vertices, expected {expect}")
    for mesh, expect in zip(templates.object_levels, OBJECT_LEVELS):
        if mesh.num_vertices != expect:
            raise PlanError(f"object level has {mesh.num_vertices} vertices, expected {expect}")

    skeleton = build_skeleton("composite", hands=config.hands)
    level0 = LevelSpec([(n, 21) if n != "object" else (n, 8) for n in layout.part_names],
                       skeleton.topology)
    ladder_indices = {3: (0, 1, 2), 2: (1, 2), 1: (2,)}[config.stages]

    levels = [level0]
    for li in ladder_indices:
        hand_mesh = templates.hand_levels[li]
        obj_mesh = templates.object_levels[li]
        part_counts = []
        part_faces = {}
        for name in layout.part_names:
            mesh = obj_mesh if name == "object" else hand_mesh
            part_counts.append((name, mesh.num_vertices))
            part_faces[name] = mesh.faces.copy()
        topo = None if li == ladder_indices[-1] else _level_topology(part_counts, part_faces)
        levels.append(LevelSpec(part_counts, topo, part_faces))
    return StagePlan(layout, levels, list(config.widths), config.input_dim,
                     config.textured, config)


class Unpool(Module):
    """Trainable dense prolongation from V_in to V_out nodes."""

    def __init__(self, rng: Rng, v_out: int, v_in: int):
        if v_out <= v_in:
            raise PlanError(f"unpool must grow the graph, got {v_in} -> {v_out}")
        # variance-preserving rows: entries scaled by 1/sqrt(V_in)
        self.matrix = Tensor(np.asarray(rng.normal((v_out, v_in), std=1.0 / np.sqrt(v_in))),
                             requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.matrix.shape[1]:
            raise T.ShapeError(
                f"unpool input rows {x.shape[-2]} != {self.matrix.shape[1]}")
        return T.matmul(self.matrix, x)


class ShapeNetwork(Module):
    """GraFormer stages + unpooling, then the coordinate (and RGB) head."""

    def __init__(self, rng: Rng, plan: StagePlan):
        self.plan = plan
        self.stages = []
        self.unpools = []
        for i in range(plan.num_stages):
            in_dim = plan.input_dim if i == 0 else plan.widths[i - 1]
            cfg_src = plan.config or StagePlanConfig()
            cfg = GraFormerConfig(
                input_dim=in_dim, output_dim=plan.widths[i], d_model=plan.widths[i],
                num_heads=cfg_src.num_heads, num_blocks=cfg_src.num_blocks,
                cheb_order=cfg_src.cheb_order, use_attention=cfg_src.use_attention)
            self.stages.append(GraFormer(rng.child(("stage", i)), plan.levels[i].topology, cfg))
            self.unpools.append(Unpool(rng.child(("unpool", i)),
                                       plan.levels[i + 1].total, plan.levels[i].total))
        last_w = plan.widths[-1]
        self.head_xyz = Linear(rng.child("head_xyz"), last_w, 3)
        self.head_rgb = Linear(rng.child("head_rgb"), last_w, 3) if plan.textured else None

    def __call__(self, x) -> Tensor:
        xt = x if isinstance(x, Tensor) else Tensor(x)
        single = xt.ndim == 2
        if single:
            xt = T.reshape(xt, (1,) + xt.shape)
        if xt.shape[-1] != self.plan.input_dim:
            raise T.ShapeError(
                f"input width {xt.shape[-1]} != plan input_dim {self.plan.input_dim}")
        h = xt
        for i, (stage, unpool) in enumerate(zip(self.stages, self.unpools)):
            expected = self.plan.levels[i].total
            if h.shape[-2] != expected:
                raise T.ShapeError(
                    f"stage {i}: {h.shape[-2]} nodes, plan says {expected}")
            h = unpool(stage(h))
        assert h.shape[-2] == self.plan.levels[-1].total
        xyz = self.head_xyz(h)
        if self.head_rgb is not None:
            out = T.concat([xyz, T.sigmoid(self.head_rgb(h))], axis=-1)
        else:
            out = xyz
        return T.reshape(out, out.shape[1:]) if single else out

"""Training loops for the pose lifter and the shape network, evaluation,
and run logging.

Both branches train jointly on one combined loss (pose MSE + vertex MSE,
plus the photometric term when texture is on) with a single optimizer;
the branches share the feature provider but own independent parameters.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from . import thr1
from .coarse2fine import ShapeNetwork, StagePlan, StagePlanConfig, build_stage_plan
from .config import RunConfig
from .graformer import GraFormer, GraFormerConfig
from .graphs import build_skeleton
from .losses import photometric_loss
from .metrics import MetricReport, aligned_mpjpe, mpjpe, pcv_curve, procrustes_align
from .optim import make_optimizer
from .rng import Rng
from .synth import (SynthConfig, SynthDataset, modality_features, modality_width)
from .templates import TemplateSet, load_templates
from .tensor import NumericError, Tensor, backward, no_grad


class TrainAbort(Exception):
    """Non-finite loss; the last good checkpoint stays on disk."""


def build_pose_lifter(rng: Rng, config: RunConfig) -> GraFormer:
    topology = build_skeleton("composite", hands=config.hands).topology
    cfg = GraFormerConfig(
        input_dim=modality_width(config.modality, config.feature_width, include_roi=False),
        output_dim=3, d_model=config.pose_d_model, num_heads=config.num_heads,
        num_blocks=config.pose_blocks, cheb_order=config.cheb_order)
    return GraFormer(rng, topology, cfg)


def build_shape_network(rng: Rng, config: RunConfig, templates: TemplateSet) -> ShapeNetwork:
    plan_cfg = StagePlanConfig(
        hands=config.hands, stages=config.stages,
        input_dim=modality_width(config.modality, config.feature_width),
        widths=config.stage_widths, textured=config.textured,
        num_blocks=config.shape_blocks, num_heads=config.num_heads,
        cheb_order=config.cheb_order)
    plan = build_stage_plan(templates, plan_cfg)
    return ShapeNetwork(rng, plan)


def _require_finite(value: float, context: dict) -> float:
    if not np.isfinite(value):
        raise TrainAbort(f"non-finite loss: {context}")
    return value


def pose_train_step(model: GraFormer, features, targets, optimizer) -> float:
    """One MSE step on the 3D pose; returns the step's loss."""
    with T.deferred_finite_checks():
        loss = T.mse(model(features), Tensor(np.asarray(targets)))
        value = _require_finite(float(loss.data), {"branch": "pose"})
        backward(loss)
    optimizer.step()
    return value


def shape_forward_losses(model: ShapeNetwork, features, target_verts,
                         photo_batch=None) -> tuple:
    """Combined shape loss tensor plus the per-term float breakdown."""
    out = model(features)
    pred_xyz = out[..., :3] if model.plan.textured else out
    loss_v = T.mse(pred_xyz, Tensor(np.asarray(target_verts)))
    terms = {"shape": float(loss_v.data)}
    total = loss_v
    if model.plan.textured and photo_batch is not None:
        photo = None
        rgb = out[..., 3:]
        for i, (image, intr, verts_cam) in enumerate(photo_batch):
            piece = photometric_loss(image, intr, verts_cam, rgb[i])
            photo = piece if photo is None else photo + piece
        photo = photo / float(len(photo_batch))
        terms["photo"] = float(photo.data)
        total = total + photo
    terms["total"] = float(total.data)
    return total, terms


def shape_train_step(model: ShapeNetwork, features, target_verts, optimizer,
                     photo_batch=None) -> dict:
    with T.deferred_finite_checks():
        total, terms = shape_forward_losses(model, features, target_verts, photo_batch)
        _require_finite(terms["total"], {"branch": "shape", "terms": terms})
        backward(total)
    optimizer.step()
    return terms


def photo_inputs_for(dataset: SynthDataset, indices) -> list:
    out = []
    for i in indices:
        s = dataset.sample(i)
        out.append((np.asarray(s.image, dtype=np.float64), s.intrinsics, s.verts_camera()))
    return out


# ---------------------------------------------------------------------------
# evaluation


def evaluate_pose(model: GraFormer, dataset: SynthDataset, indices, modality: str) -> dict:
    part_slices = dataset.sample(0).layout.joint_slices()
    sums = {name: {"err": 0.0, "aligned": 0.0} for name in part_slices}
    overall = {"err": 0.0, "aligned": 0.0}
    with no_grad():
        for i in indices:
            s = dataset.sample(i)
            pred = model(modality_features(s, modality, include_roi=False)).data
            gt = s.gt_pose_3d
            overall["err"] += mpjpe(pred, gt)
            overall["aligned"] += aligned_mpjpe(pred, gt)
            for name, sl in part_slices.items():
                sums[name]["err"] += mpjpe(pred[sl], gt[sl])
                sums[name]["aligned"] += aligned_mpjpe(pred[sl], gt[sl])
    n = len(indices)
    out = {"overall": {k: v / n for k, v in overall.items()}}
    out.update({name: {k: v / n for k, v in vals.items()} for name, vals in sums.items()})
    return out


def evaluate_shape(model: ShapeNetwork, dataset: SynthDataset, indices, modality: str,
                   pcv_thresholds=None) -> dict:
    plan = model.plan
    part_slices = plan.levels[-1].part_slices()
    sums = {name: {"err": 0.0, "aligned": 0.0} for name in part_slices}
    overall = {"err": 0.0, "aligned": 0.0}
    pooled_errors = []
    pooled_aligned = []
    with no_grad():
        for i in indices:
            s = dataset.sample(i)
            out = model(modality_features(s, modality)).data
            pred = out[:, :3]
            gt = s.gt_mesh_vertices
            per_vertex = np.linalg.norm(pred - gt, axis=1)
            pooled_errors.append(per_vertex)
            overall["err"] += float(per_vertex.mean())
            aligned, _ = procrustes_align(pred, gt)
            aligned_err = np.linalg.norm(aligned - gt, axis=1)
            pooled_aligned.append(aligned_err)
            overall["aligned"] += float(aligned_err.mean())
            for name, sl in part_slices.items():
                sums[name]["err"] += float(per_vertex[sl].mean())
                sums[name]["aligned"] += float(aligned_err[sl].mean())
    n = len(indices)
    report = {"overall": {k: v / n for k, v in overall.items()}}
    report.update({name: {k: v / n for k, v in vals.items()} for name, vals in sums.items()})
    if pcv_thresholds is not None:
        report["pcv"] = pcv_curve(np.concatenate(pooled_errors), pcv_thresholds)
        report["pcv_aligned"] = pcv_curve(np.concatenate(pooled_aligned), pcv_thresholds)
    return report


def metric_report_from(pose_eval: dict | None, shape_eval: dict | None,
                       units: str = "mm-equivalent") -> MetricReport:
    rep = MetricReport(units=units)
    if pose_eval:
        rep.mpjpe_parts = {k: v["err"] for k, v in pose_eval.items() if k != "pcv"}
        rep.aligned_mpjpe_parts = {k: v["aligned"] for k, v in pose_eval.items() if k != "pcv"}
    if shape_eval:
        rep.vertex_error_parts = {
            k: v["err"] for k, v in shape_eval.items() if not k.startswith("pcv")}
        rep.aligned_vertex_error_parts = {
            k: v["aligned"] for k, v in shape_eval.items() if not k.startswith("pcv")}
        rep.pcv = shape_eval.get("pcv", [])
    return rep


# ---------------------------------------------------------------------------
# run logging and checkpoints


class RunLog:
    """Append-only JSON-lines log; step records carry no wall-clock so a
    deterministic rerun produces a bit-identical file. Wall-clock and other
    volatile facts go to meta.json."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / "run.jsonl"
        self._fh = open(self.path, "a")
        self._t0 = time.time()

    def log_step(self, step: int, terms: dict):
        rec = {"kind": "step", "step": step, "terms": terms}
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._fh.flush()

    def log_eval(self, step: int, report: dict):
        rec = {"kind": "eval", "step": step, "report": report}
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._fh.flush()

    def write_meta(self, config: RunConfig, extra: dict | None = None):
        meta = {"config": config.to_json(), "wall_clock_s": time.time() - self._t0}
        if extra:
            meta.update(extra)
        with open(self.dir / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    def close(self):
        self._fh.close()


def save_run_checkpoint(directory, config: RunConfig, pose_model, shape_model,
                        step: int) -> dict:
    arrays = {}
    if pose_model is not None:
        arrays.update({f"pose.{k}": v for k, v in pose_model.state().items()})
    if shape_model is not None:
        arrays.update({f"shape.{k}": v for k, v in shape_model.state().items()})
    extra = {"config": config.to_json(), "step": step}
    return thr1.save_checkpoint(directory, arrays, extra=extra)


def load_run_checkpoint(directory):
    arrays, manifest = thr1.load_checkpoint(directory)
    config = RunConfig(**{k: tuple(v) if k == "shape_widths" else v
                          for k, v in manifest["config"].items()})
    pose_state = {k[len("pose."):]: v for k, v in arrays.items() if k.startswith("pose.")}
    shape_state = {k[len("shape."):]: v for k, v in arrays.items() if k.startswith("shape.")}
    return config, pose_state, shape_state, manifest


@dataclass
class TrainResult:
    config: RunConfig
    pose_model: GraFormer | None
    shape_model: ShapeNetwork | None
    history: list
    checkpoint_dir: Path
    final_eval: dict = field(default_factory=dict)


def run_training(config: RunConfig, out_dir=None, templates: TemplateSet | None = None,
                 resume_from=None) -> TrainResult:
    """Full training run per the config; writes logs, checkpoints, metrics."""
    out = Path(out_dir or config.out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    templates = templates or load_templates()
    log = RunLog(out / "logs")

    synth_cfg = SynthConfig(hands=config.hands, image_mode=config.image_mode,
                            heatmap_noise=config.heatmap_noise,
                            feature_width=config.feature_width)
    train_ds = SynthDataset(config.seed, synth_cfg, config.train_count, templates)
    eval_ds = SynthDataset(Rng(config.seed).child("eval").seed, synth_cfg,
                           config.eval_count, templates)

    rng = Rng(config.seed)
    pose_model = build_pose_lifter(rng.child("pose_model"), config) if config.train_pose else None
    shape_model = (build_shape_network(rng.child("shape_model"), config, templates)
                   if config.train_shape else None)
    if resume_from:
        _, pose_state, shape_state, manifest = load_run_checkpoint(resume_from)
        start_step = int(manifest.get("step", 0))
        if pose_model is not None and pose_state:
            pose_model.load_state(pose_state)
        if shape_model is not None and shape_state:
            shape_model.load_state(shape_state)
    else:
        start_step = 0

    params = []
    if pose_model is not None:
        params.extend(pose_model.parameters())
    if shape_model is not None:
        params.extend(shape_model.parameters())
    optimizer = make_optimizer(config.optimizer, params, config.lr)

    batch_rng = rng.child("batches")
    history = []
    eval_indices = list(range(config.eval_count))
    last_good = out / "checkpoints" / "last_good"

    def run_eval(step):
        pose_eval = (evaluate_pose(pose_model, eval_ds, eval_indices, config.modality)
                     if pose_model else None)
        thresholds = np.linspace(0, config.pcv_max_threshold, 21)
        shape_eval = (evaluate_shape(shape_model, eval_ds, eval_indices, config.modality,
                                     pcv_thresholds=thresholds)
                      if shape_model else None)
        report = {}
        if pose_eval:
            report["pose"] = {k: v for k, v in pose_eval.items()}
        if shape_eval:
            report["shape"] = {k: v for k, v in shape_eval.items() if not k.startswith("pcv")}
        log.log_eval(step, report)
        return pose_eval, shape_eval

    step = start_step
    try:
        for step in range(start_step, start_step + config.steps):
            idx = [int(i) for i in
                   batch_rng.child(("step", step)).integers(0, config.train_count,
                                                            (config.batch,))]
            terms = {}
            total = None
            with T.deferred_finite_checks():
                if pose_model is not None:
                    feats_pose = train_ds.batch_features(idx, config.modality,
                                                         include_roi=False)
                    pose_loss = T.mse(pose_model(feats_pose), Tensor(train_ds.batch_pose(idx)))
                    terms["pose"] = float(pose_loss.data)
                    total = pose_loss
                if shape_model is not None:
                    feats_shape = train_ds.batch_features(idx, config.modality)
                    photo = (photo_inputs_for(train_ds, idx) if config.textured else None)
                    shape_total, shape_terms = shape_forward_losses(
                        shape_model, feats_shape, train_ds.batch_mesh(idx), photo)
                    terms.update({k: v for k, v in shape_terms.items() if k != "total"})
                    total = shape_total if total is None else total + shape_total
                terms["total"] = float(total.data)
                _require_finite(terms["total"], {"step": step, "terms": terms})
                backward(total)
            optimizer.step()
            history.append(terms)
            log.log_step(step, terms)
            if config.eval_every and (step + 1) % config.eval_every == 0:
                run_eval(step + 1)
                save_run_checkpoint(last_good, config, pose_model, shape_model, step + 1)
    except (TrainAbort, NumericError) as e:
        log.write_meta(config, {"aborted_at_step": step, "reason": str(e)})
        log.close()
        raise TrainAbort(str(e)) from e

    final_step = start_step + config.steps
    pose_eval, shape_eval = run_eval(final_step)
    ckpt_dir = out / "checkpoints" / "final"
    manifest = save_run_checkpoint(ckpt_dir, config, pose_model, shape_model, final_step)
    report = metric_report_from(pose_eval, shape_eval)
    report.save(out / "metrics")
    log.write_meta(config, {"checkpoint_hash": manifest["content_hash"],
                            "final_step": final_step})
    log.close()
    return TrainResult(config=config, pose_model=pose_model, shape_model=shape_model,
                       history=history, checkpoint_dir=ckpt_dir,
                       final_eval={"pose": pose_eval, "shape": shape_eval})

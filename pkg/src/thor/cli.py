"""Command-line entry point.

Commands: train, eval, infer, ablate, and the mesh utilities
(icosphere, simplify, deform). Outputs land under --out in checkpoints/,
metrics/, meshes/ and logs/; every delimited report gets a rendered
figure next to it.

Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 IO error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import mesh as meshmod
from . import thr1
from .ablate import run_ablation
from .config import ConfigError, RunConfig
from .dataio import DataError, FileDataset, export_dataset
from .graphs import PowerIterationError
from .losses import LossError
from .mesh import MeshError
from .meshlosses import DeformDivergence, deform_sphere, fit_template_to_target
from .metrics import write_pcv_csv
from .plots import deform_history_figure, loss_curve_figure, pcv_figure
from .qecd import qecd_simplify
from .rng import Rng
from .synth import SynthConfig, SynthDataset
from .templates import load_templates
from .tensor import NumericError
from .train import (TrainAbort, build_pose_lifter, build_shape_network,
                    evaluate_pose, evaluate_shape, load_run_checkpoint,
                    metric_report_from, run_training)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    try:
        return fn()
    except ConfigError as e:
        _fail(EXIT_CONFIG, str(e))
    except (TrainAbort, NumericError, DeformDivergence, PowerIterationError) as e:
        _fail(EXIT_NUMERIC, str(e))
    except (OSError, thr1.FormatError, DataError, MeshError, LossError) as e:
        _fail(EXIT_IO, str(e))


_CONFIG_FLAGS = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="JSON config file; flags override its values."),
    click.option("--seed", type=int, default=None),
    click.option("--steps", type=int, default=None),
    click.option("--stages", type=click.Choice(["1", "2", "3"]), default=None),
    click.option("--feat", "feature_width", type=click.Choice(["1024", "2048", "4096"]),
                 default=None),
    click.option("--input", "modality", type=click.Choice(["heatmap", "pose2d", "pose3d"]),
                 default=None),
    click.option("--textured/--no-textured", default=None),
    click.option("--hands", type=click.Choice(["1", "2"]), default=None),
    click.option("--out", "out_dir", type=click.Path(), default=None),
    click.option("--deterministic", is_flag=True, default=False,
                 help="Record determinism intent; runs are seeded either way."),
    click.option("--batch", type=int, default=None),
    click.option("--lr", type=float, default=None),
    click.option("--train-count", type=int, default=None),
    click.option("--eval-count", type=int, default=None),
    click.option("--image-mode", type=click.Choice(["sinusoid", "ramp"]), default=None),
]


def config_flags(fn):
    for flag in reversed(_CONFIG_FLAGS):
        fn = flag(fn)
    return fn


def _build_config(config_path, **overrides) -> RunConfig:
    for key in ("stages", "feature_width", "hands"):
        if overrides.get(key) is not None:
            overrides[key] = int(overrides[key])
    overrides.setdefault("deterministic", False)
    return RunConfig.from_sources(config_path, **overrides)


@click.group()
def main():
    """Two-hands-and-object reconstruction toolkit."""


@main.command()
@config_flags
@click.option("--resume", "resume_from", type=click.Path(), default=None,
              help="Checkpoint directory to continue from.")
def train(config_path, resume_from, **overrides):
    """Train the pose lifter and shape network on the synthetic stream."""

    def body():
        cfg = _build_config(config_path, **overrides)
        result = run_training(cfg, resume_from=resume_from)
        out = Path(cfg.out_dir)
        loss_curve_figure(result.history, out / "logs" / "loss_curve.png")
        shape_eval = result.final_eval.get("shape")
        if shape_eval and "pcv" in shape_eval:
            pcv_figure({"non-aligned": shape_eval["pcv"],
                        "aligned": shape_eval["pcv_aligned"]},
                       out / "metrics" / "pcv_curve.png")
        click.echo(f"checkpoint: {result.checkpoint_dir}")
        for branch, ev in result.final_eval.items():
            if ev:
                click.echo(f"{branch} eval: overall err {ev['overall']['err']:.4f}, "
                           f"aligned {ev['overall']['aligned']:.4f}")

    _guarded(body)


def _load_models(checkpoint_dir, templates):
    cfg, pose_state, shape_state, manifest = load_run_checkpoint(checkpoint_dir)
    rng = Rng(cfg.seed)
    pose_model = shape_model = None
    if pose_state:
        pose_model = build_pose_lifter(rng.child("pose_model"), cfg)
        pose_model.load_state(pose_state)
    if shape_state:
        shape_model = build_shape_network(rng.child("shape_model"), cfg, templates)
        shape_model.load_state(shape_state)
    return cfg, pose_model, shape_model, manifest


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--data", "manifest_path", type=click.Path(exists=True), default=None,
              help="THR1 dataset manifest; defaults to synthetic eval samples.")
@click.option("--hands", type=click.Choice(["1", "2"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--count", type=int, default=None)
def eval_cmd(checkpoint, out_dir, manifest_path, hands, seed, count):
    """Evaluate a checkpoint: JSON report, PCV CSV and figure."""

    def body():
        templates = load_templates()
        cfg, pose_model, shape_model, _ = _load_models(checkpoint, templates)
        if hands is not None and int(hands) != cfg.hands:
            raise ConfigError(
                f"layout mismatch: checkpoint is {cfg.hands}-hand, dataset asks {hands}")
        if manifest_path:
            ds = FileDataset(manifest_path)
            ds.require_ground_truth()
            if ds.layout.hands != cfg.hands:
                raise ConfigError(
                    f"layout mismatch: checkpoint is {cfg.hands}-hand, "
                    f"manifest is {ds.layout.hands}-hand")
            n = len(ds)
        else:
            eval_seed = seed if seed is not None else Rng(cfg.seed).child("eval").seed
            n = count or cfg.eval_count
            ds = SynthDataset(eval_seed, SynthConfig(
                hands=cfg.hands, image_mode=cfg.image_mode,
                feature_width=cfg.feature_width), n, templates)
        indices = list(range(n))
        thresholds = np.linspace(0, cfg.pcv_max_threshold, 21)
        pose_eval = (evaluate_pose(pose_model, ds, indices, cfg.modality)
                     if pose_model else None)
        shape_eval = (evaluate_shape(shape_model, ds, indices, cfg.modality,
                                     pcv_thresholds=thresholds)
                      if shape_model else None)
        out = Path(out_dir or "eval_out")
        metrics_dir = out / "metrics"
        report = metric_report_from(pose_eval, shape_eval)
        report.save(metrics_dir)
        if shape_eval:
            pcv_figure({"non-aligned": shape_eval["pcv"],
                        "aligned": shape_eval["pcv_aligned"]},
                       metrics_dir / "pcv_curve.png")
        click.echo(json.dumps(report.to_json(), indent=2, sort_keys=True))

    _guarded(body)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--data", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default="infer_out")
@click.option("--limit", type=int, default=None, help="Process only the first N samples.")
def infer(checkpoint, manifest_path, out_dir, limit):
    """Reconstruct meshes and 3D pose from a THR1 dataset manifest."""

    def body():
        templates = load_templates()
        cfg, pose_model, shape_model, _ = _load_models(checkpoint, templates)
        ds = FileDataset(manifest_path)
        if ds.layout.hands != cfg.hands:
            raise ConfigError(
                f"layout mismatch: checkpoint is {cfg.hands}-hand, "
                f"manifest is {ds.layout.hands}-hand")
        out = Path(out_dir)
        meshes_dir = out / "meshes"
        meshes_dir.mkdir(parents=True, exist_ok=True)
        n = min(len(ds), limit) if limit else len(ds)
        from .tensor import no_grad
        for i in range(n):
            s = ds.sample(i)
            record = {"index": i}
            with no_grad():
                if pose_model is not None:
                    pred_pose = pose_model(ds.features(i, cfg.modality, include_roi=False)).data
                    record["pose_3d"] = pred_pose.tolist()
                if shape_model is not None:
                    pred = shape_model(ds.features(i, cfg.modality)).data
                    verts = pred[:, :3]
                    colors = pred[:, 3:] if shape_model.plan.textured else None
                    for part, sl in shape_model.plan.levels[-1].part_slices().items():
                        faces = shape_model.plan.final_part_faces()[part]
                        m = meshmod.Mesh(verts[sl], faces,
                                         None if colors is None else colors[sl])
                        meshmod.write_obj(meshes_dir / f"sample{i:05d}_{part}.obj", m)
            with open(meshes_dir / f"sample{i:05d}_pose.json", "w") as fh:
                json.dump(record, fh, sort_keys=True)
        click.echo(f"wrote {n} sample reconstructions under {meshes_dir}")

    _guarded(body)


@main.command()
@config_flags
def ablate(config_path, **overrides):
    """Run the 7-row stage-depth / input-modality ablation table."""

    def body():
        overrides.setdefault("out_dir", None)
        values = {k: v for k, v in overrides.items() if v is not None}
        values.setdefault("steps", 400)
        values.setdefault("train_count", 96)
        values.setdefault("eval_count", 24)
        cfg = _build_config(config_path, **values)
        out = Path(cfg.out_dir) / "metrics"
        rows = run_ablation(cfg, out)
        click.echo(f"ablation table: {out / 'ablation.csv'}")
        for row in rows:
            click.echo(f"  id {row['id']}: {row['graformers']} stage(s), "
                       f"{row['graph_input']}+F{row['feature_width']}: "
                       f"aligned {row['vertex_err_aligned']:.4f}, "
                       f"err {row['vertex_err']:.4f} [{row['status']}]")

    _guarded(body)


@main.group()
def mesh():
    """Mesh utilities: icosphere generation, decimation, deformation."""


@mesh.command()
@click.option("--level", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), default="icosphere.obj")
def icosphere(level, out_path):
    """Write a unit icosphere OBJ at the given subdivision level."""

    def body():
        m = meshmod.icosphere(level)
        meshmod.mesh_io(out_path, "write", m)
        click.echo(f"{out_path}: {m.num_vertices} vertices, {m.num_faces} faces")

    _guarded(body)


@mesh.command()
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--target-v", "target", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), default="simplified.obj")
def simplify(input_path, target, out_path):
    """Quadric edge collapse decimation to an exact vertex count."""

    def body():
        m = meshmod.mesh_io(input_path, "read")
        out = qecd_simplify(m, target)
        meshmod.mesh_io(out_path, "write", out)
        click.echo(f"{out_path}: {out.num_vertices} vertices, {out.num_faces} faces")

    _guarded(body)


@mesh.command()
@click.option("--target", "target_path", type=click.Path(exists=True), required=True)
@click.option("--template", "template_path", type=click.Path(exists=True), default=None,
              help="Template sphere OBJ/PLY; defaults to the canonical 1000-vertex sphere.")
@click.option("--iters", type=int, default=2000)
@click.option("--lr", type=float, default=1.0)
@click.option("--lambda1", type=float, default=0.01)
@click.option("--lambda2", type=float, default=0.1)
@click.option("--samples", type=int, default=5000)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(), default="deformed.obj")
def deform(target_path, template_path, iters, lr, lambda1, lambda2, samples, seed, out_path):
    """Deform the canonical sphere onto a target mesh (fixed topology)."""

    def body():
        target = meshmod.mesh_io(target_path, "read")
        if template_path:
            template = meshmod.mesh_io(template_path, "read")
        else:
            template = load_templates().object_sphere
        fitted = fit_template_to_target(template, target)
        result = deform_sphere(fitted, target, iters=iters, lr=lr, lam1=lambda1,
                               lam2=lambda2, n_samples=samples, seed=seed)
        meshmod.mesh_io(out_path, "write", result.mesh)
        history_csv = Path(out_path).with_suffix(".history.csv")
        with open(history_csv, "w") as fh:
            fh.write("iter,chamfer,edge,normal,laplacian,total\n")
            for h in result.history:
                fh.write(f"{h['iter']},{h['chamfer']:.8g},{h['edge']:.8g},"
                         f"{h['normal']:.8g},{h['laplacian']:.8g},{h['total']:.8g}\n")
        deform_history_figure(result.history, Path(out_path).with_suffix(".history.png"))
        click.echo(f"{out_path}: final loss {result.final_loss:.6f} "
                   f"(chamfer {result.history[-1]['chamfer']:.6f})")

    _guarded(body)


if __name__ == "__main__":
    main()

"""Run configuration: JSON file plus flag overrides, validated before any
compute starts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .synth import FEATURE_WIDTHS, MODALITIES


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # dataset
    hands: int = 1
    train_count: int = 200
    eval_count: int = 32
    seed: int = 0
    image_mode: str = "sinusoid"
    heatmap_noise: float = 0.0
    # model
    stages: int = 3
    feature_width: int = 2048
    modality: str = "heatmap"
    pose_d_model: int = 128
    pose_blocks: int = 5
    shape_blocks: int = 1
    num_heads: int = 4
    cheb_order: int = 2
    shape_widths: tuple = (192, 96, 48)
    textured: bool = False
    # optimizer
    optimizer: str = "adam"
    lr: float = 1e-4
    batch: int = 8
    steps: int = 2000
    # run
    out_dir: str = "runs/default"
    deterministic: bool = False
    eval_every: int = 500
    pcv_max_threshold: float = 2.0
    train_pose: bool = True
    train_shape: bool = True

    def __post_init__(self):
        self.shape_widths = tuple(int(w) for w in self.shape_widths)
        checks = [
            (self.hands in (1, 2), f"hands must be 1 or 2, got {self.hands}"),
            (self.stages in (1, 2, 3), f"stages must be 1, 2 or 3, got {self.stages}"),
            (self.feature_width in FEATURE_WIDTHS,
             f"feature_width must be one of {FEATURE_WIDTHS}, got {self.feature_width}"),
            (self.modality in MODALITIES,
             f"modality must be one of {MODALITIES}, got '{self.modality}'"),
            (self.optimizer in ("adam", "sgd"), f"unknown optimizer '{self.optimizer}'"),
            (self.image_mode in ("sinusoid", "ramp"), f"unknown image_mode '{self.image_mode}'"),
            (self.lr > 0, "lr must be positive"),
            (self.batch >= 1, "batch must be >= 1"),
            (self.steps >= 0, "steps must be >= 0"),
            (self.train_count >= 1, "train_count must be >= 1"),
            (self.eval_count >= 1, "eval_count must be >= 1"),
            (len(self.shape_widths) >= self.stages,
             f"need at least {self.stages} shape widths, got {self.shape_widths}"),
            (self.pose_blocks >= 1 and self.shape_blocks >= 1, "blocks must be >= 1"),
            (self.pose_d_model % self.num_heads == 0,
             f"pose_d_model {self.pose_d_model} not divisible by {self.num_heads} heads"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def stage_widths(self) -> tuple:
        return tuple(self.shape_widths[: self.stages])

    def to_json(self) -> dict:
        out = asdict(self)
        out["shape_widths"] = list(self.shape_widths)
        return out

    @classmethod
    def from_sources(cls, config_path=None, **overrides) -> "RunConfig":
        """JSON file first, then explicit flag overrides win."""
        values = {}
        if config_path:
            try:
                with open(config_path) as fh:
                    values.update(json.load(fh))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config {config_path}: {e}") from None
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(str(e)) from None

"""Pipeline configuration, ablation flags and the Method 1-9 presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

FUSIONS = ("none", "2d", "3d")
INPUT_VOLUMES = ("costV", "costA")


@dataclass
class PipelineConfig:
    d_max: int = 48
    feature_channels: int = 16
    refine_channels: int = 32
    roi_size: int = 16
    selective_margin: float = 3.0
    anchor_strides: tuple = (8, 8, 8)  # (d, v, u)
    anchor_extents: tuple = ((40.0, 40.0, 6.0), (26.0, 26.0, 3.0))  # (du, dv, dd) per type
    pos_iou: float = 0.5
    neg_iou: float = 0.35
    rpn_hidden: int = 16
    rpn_sample: int = 64
    top_k: int = 32
    loss_weights: tuple = (1.0, 1.0, 2.0)
    learning_rate: float = 1e-3
    steps: int = 600
    window: tuple = (48, 96)  # training crop (rows, cols)
    seed: int = 0
    # ablation flags
    rpn_on: bool = True
    header_on: bool = True
    deep_sample_on: bool = True
    selective_on: bool = True
    fusion: str = "3d"
    input_volume: str = "costV"

    def __post_init__(self):
        self.anchor_strides = tuple(int(s) for s in self.anchor_strides)
        self.anchor_extents = tuple(tuple(float(v) for v in e) for e in self.anchor_extents)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        self.window = tuple(int(w) for w in self.window)
        self.validate()

    def validate(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.input_volume not in INPUT_VOLUMES:
            raise ValueError(f"input_volume must be one of {INPUT_VOLUMES}, got {self.input_volume!r}")
        if self.header_on and not self.rpn_on:
            raise ValueError("the header needs RPN proposals (header_on requires rpn_on)")
        if (self.deep_sample_on or self.selective_on) and not self.header_on:
            raise ValueError("RoISelect options only apply with the header enabled")
        if self.selective_on and not self.deep_sample_on:
            raise ValueError("selective sampling builds on deep sampling")
        if self.roi_size % 8:
            raise ValueError(f"roi_size must be a multiple of 8, got {self.roi_size}")
        if len(self.anchor_extents) == 0:
            raise ValueError("anchor extents list is empty")
        if len(self.loss_weights) != 3:
            raise ValueError("loss_weights needs (disp, rpn, header)")

    @property
    def sample_mode(self):
        if self.selective_on:
            return "selective"
        return "deep" if self.deep_sample_on else "trilinear"

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["anchor_strides"] = list(self.anchor_strides)
        d["anchor_extents"] = [list(e) for e in self.anchor_extents]
        d["loss_weights"] = list(self.loss_weights)
        d["window"] = list(self.window)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def save_config(path, cfg):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: {e}") from None
    try:
        return PipelineConfig.from_dict(data)
    except (TypeError, ValueError) as e:
        raise ValueError(f"{path}: {e}") from None


_DET_OFF = dict(rpn_on=False, header_on=False, deep_sample_on=False, selective_on=False)

# Methods 1-5 add detection parts one at a time; 6-9 vary input volume and fusion
# on top of the full RoISelect.
METHODS = {
    1: dict(_DET_OFF),
    2: dict(rpn_on=True, header_on=False, deep_sample_on=False, selective_on=False),
    3: dict(rpn_on=True, header_on=True, deep_sample_on=False, selective_on=False, fusion="3d"),
    4: dict(rpn_on=True, header_on=True, deep_sample_on=True, selective_on=False, fusion="3d"),
    5: dict(rpn_on=True, header_on=True, deep_sample_on=True, selective_on=True, fusion="3d"),
    6: dict(rpn_on=True, header_on=True, deep_sample_on=True, selective_on=True, fusion="none",
            input_volume="costV"),
    7: dict(rpn_on=True, header_on=True, deep_sample_on=True, selective_on=True, fusion="none",
            input_volume="costA"),
    8: dict(rpn_on=True, header_on=True, deep_sample_on=True, selective_on=True, fusion="2d",
            input_volume="costV"),
    9: dict(rpn_on=True, header_on=True, deep_sample_on=True, selective_on=True, fusion="3d",
            input_volume="costV"),
}


def method_config(method, base=None, **overrides):
    if method not in METHODS:
        raise ValueError(f"unknown method {method}; choose from 1-9")
    base = base or PipelineConfig()
    return base.replace(**{**METHODS[method], **overrides})


def toy_config(**overrides):
    """Small settings used by the desk-scale experiments."""
    cfg = dict(refine_channels=8, anchor_strides=(4, 8, 8), steps=600, window=(48, 96))
    cfg.update(overrides)
    return PipelineConfig(**cfg)


def describe(cfg):
    flags = [name for name in ("rpn_on", "header_on", "deep_sample_on", "selective_on") if getattr(cfg, name)]
    return f"{'+'.join(flags) or 'disparity-only'} fusion={cfg.fusion} volume={cfg.input_volume}"


__all__ = ["FUSIONS", "INPUT_VOLUMES", "METHODS", "PipelineConfig", "describe", "load_config",
           "method_config", "save_config", "toy_config"]

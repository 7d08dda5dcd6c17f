"""Shared numeric contracts: resizing, depth normalization, clamped sigmoid, config."""
from __future__ import annotations

import ast
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

EPS_P = 1e-7
EPS_D = 1e-3


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def resize_bilinear(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be positive, got {out_h}x{out_w}")
    if x.dim() != 4:
        raise ShapeError(f"expected (B,C,H,W), got {tuple(x.shape)}")
    if x.shape[-2:] == (out_h, out_w):
        return x
    return F.interpolate(x, size=(out_h, out_w), mode="bilinear", align_corners=False)


def resize_like(x: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    return resize_bilinear(x, ref.shape[-2], ref.shape[-1])


def normalize_depth(raw, bit_depth: int = 8) -> np.ndarray:
    """Scale a raw depth image to (0, 1] by its own maximum.

    All-zero input falls back to the bit-depth range and ends up as the
    constant floor ``EPS_D``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    peak = raw.max() if raw.size else 0.0
    if peak <= 0:
        log.warning("all-zero depth map; using constant floor %g", EPS_D)
        peak = float(2**bit_depth - 1)
    return np.clip(raw / peak, EPS_D, 1.0)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x).clamp(EPS_P, 1.0 - EPS_P)


def _parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        low = text.lower()
        if low in ("true", "yes", "on"):
            return True
        if low in ("false", "no", "off"):
            return False
        return text


@dataclass
class Config:
    backbone: str = "resnet50"
    backbone_weights: str = ""
    channels: int = 64
    scales: list = field(default_factory=lambda: [224, 256, 288, 320, 352])
    gammas: list = field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25, 1.0])
    lambdas: list = field(default_factory=lambda: [1.0, 0.8, 0.6, 0.4, 0.2])
    base_size: int = 352
    aspp_rates: list = field(default_factory=lambda: [2, 4, 6])
    gms_kernel: int = 3
    gms_fuse: str = "logit"  # or "prob"
    edge_kernel: int = 5
    error_window: int = 1
    bce_positive_only: bool = False
    # optimisation
    epochs: int = 48
    batch_size: int = 32
    accum_steps: int = 1
    lr_backbone: float = 0.005
    lr_head: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_frac: float = 0.05
    crop_min_area: float = 0.875
    flip_prob: float = 0.5
    augment: bool = True
    # ablation switches
    use_dac: bool = True
    use_spm: bool = True
    use_caf: bool = True
    use_gms: bool = True
    use_mls: bool = True
    # io
    train_roots: list = field(default_factory=list)
    test_roots: list = field(default_factory=list)
    split_file: str = ""
    depth_source: str = "captured"  # or "estimated"
    out_dir: str = "runs/uta"
    seed: int = 0
    num_workers: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if len(self.gammas) != len(self.scales):
            raise ConfigError(f"{len(self.gammas)} gammas for {len(self.scales)} scales")
        if len(self.lambdas) != 5:
            raise ConfigError(f"need 5 stage weights, got {len(self.lambdas)}")
        if self.lr_backbone <= 0 or self.lr_head <= 0:
            raise ConfigError("learning rates must be positive")
        if self.backbone not in ("tiny", "resnet50"):
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.gms_fuse not in ("logit", "prob"):
            raise ConfigError(f"unknown gms_fuse {self.gms_fuse!r}")
        if not 0 <= self.warmup_frac < 1:
            raise ConfigError("warmup_frac must be in [0, 1)")

    @property
    def stride_multiple(self) -> int:
        return 16 if self.backbone == "tiny" else 32

    def ablation_string(self) -> str:
        on = [n for n in ("dac", "spm", "caf", "gms", "mls") if getattr(self, f"use_{n}")]
        return "+".join(on) if on else "baseline"

    def replace(self, **overrides) -> Config:
        data = asdict(self)
        data.update(overrides)
        return Config(**data)

    @classmethod
    def from_file(cls, path, **overrides) -> Config:
        """Read ``key = value`` lines; ``#`` starts a comment."""
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(value)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

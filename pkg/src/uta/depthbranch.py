"""Depth decoder sharing the encoder, and per-pixel depth-error weights."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from uta.caf import CAF, MulFusion
from uta.core import EPS_D, ShapeError, resize_bilinear


class DepthDecoder(nn.Module):
    """Top-down decoder over the stage features, starting from the ASPP context map.

    ``forward`` returns ``(p_d, depth_feats)``: the depth prediction at input
    resolution and the four deepest decoder maps (ASPP output, then the
    fused maps at levels 4, 3, 2), ordered shallow to deep to match the
    saliency decoder's fusion points.
    """

    def __init__(self, stage_channels, channels=64, use_caf=True):
        super().__init__()
        fuse = CAF if use_caf else MulFusion
        # fuse[i] merges the running map (channels wide) with stage i (0-based, levels 1..4)
        self.fuse = nn.ModuleList(fuse(channels, stage_channels[i], channels) for i in range(4))
        self.out = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, stages, context, size):
        d = context
        levels = {4: context}
        for i in (3, 2, 1, 0):
            d = self.fuse[i](d, stages[i])
            levels[i] = d
        logit = resize_bilinear(self.out(d), *size)
        p_d = EPS_D + (1.0 - EPS_D) * torch.sigmoid(logit)
        return p_d, [levels[1], levels[2], levels[3], levels[4]]


def decode_depth(decoder: DepthDecoder, stages, context, size):
    return decoder(stages, context, size)


@torch.no_grad()
def dec_weights(p_d: torch.Tensor, y_d: torch.Tensor, window: int = 1) -> torch.Tensor:
    """Normalized absolute log-depth error, one map per image, no gradient.

    For ``window > 1`` each pixel takes the mean error of its window
    (zero padded). Each image is divided by its own maximum; an error-free
    image gives all zeros.
    """
    if p_d.shape != y_d.shape:
        raise ShapeError(f"depth shapes differ: {tuple(p_d.shape)} vs {tuple(y_d.shape)}")
    raw = (torch.log(p_d) - torch.log(y_d)).abs()
    if window > 1:
        raw = F.avg_pool2d(raw, window, stride=1, padding=window // 2, count_include_pad=True)
        raw = raw[..., : p_d.shape[-2], : p_d.shape[-1]]
    peak = raw.flatten(1).amax(dim=1).view(-1, *([1] * (raw.dim() - 1)))
    return torch.where(peak > 0, raw / peak.clamp_min(torch.finfo(raw.dtype).tiny), torch.zeros_like(raw))

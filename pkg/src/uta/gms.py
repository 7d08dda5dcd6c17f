"""Gated multi-scale predictor attached to a final decoder feature map."""
from __future__ import annotations

import torch
import torch.nn as nn

from uta.core import EPS_P, resize_bilinear


class ScaleHead(nn.Module):
    """Rescale the feature map, convolve to one channel, rescale back."""

    def __init__(self, channels, scale, kernel=3):
        super().__init__()
        self.scale = scale
        self.conv = nn.Conv2d(channels, 1, kernel, padding=kernel // 2)

    def forward(self, feat, input_size):
        h, w = feat.shape[-2:]
        factor = self.scale / input_size
        th, tw = max(1, round(h * factor)), max(1, round(w * factor))
        out = self.conv(resize_bilinear(feat, th, tw))
        return resize_bilinear(out, h, w)


class GMS(nn.Module):
    """One head per training scale plus the ordinary classifier.

    Head ``k`` always sees the feature map at the resolution an input of
    ``scales[k]`` pixels would produce. ``input_size`` is the side length of
    the image that produced ``feat``; during training it equals the gated
    head's scale so that head's rescale is the identity.
    """

    def __init__(self, channels, scales=(224, 256, 288, 320, 352), gammas=(0.25, 0.25, 0.25, 0.25, 1.0),
                 kernel=3, fuse="logit"):
        super().__init__()
        if len(scales) != len(gammas):
            raise ValueError("one gamma per scale")
        self.scales = list(scales)
        self.register_buffer("gammas", torch.tensor(gammas, dtype=torch.float32), persistent=False)
        self.fuse = fuse
        self.classifier = nn.Conv2d(channels, 1, 3, padding=1)
        self.heads = nn.ModuleList(ScaleHead(channels, s, kernel) for s in scales)

    def forward_train(self, feat, scale_index, input_size=None):
        if not 0 <= scale_index < len(self.heads):
            raise IndexError(f"scale_index {scale_index} outside [0, {len(self.heads)})")
        if input_size is None:
            input_size = self.scales[scale_index]
        return self.classifier(feat) + self.heads[scale_index](feat, input_size)

    def head_outputs(self, feat, input_size):
        return [head(feat, input_size) for head in self.heads]

    def forward_infer(self, feat, input_size=None):
        """Classifier plus gamma-weighted sum of every head.

        With ``fuse="prob"`` the weighted sum is taken over head
        probabilities and the result is returned as a logit.
        """
        if input_size is None:
            input_size = max(self.scales)
        base = self.classifier(feat)
        heads = self.head_outputs(feat, input_size)
        gammas = self.gammas.to(feat.dtype)
        if self.fuse == "logit":
            return base + sum(g * h for g, h in zip(gammas, heads))
        p = torch.sigmoid(base) + sum(g * torch.sigmoid(h) for g, h in zip(gammas, heads))
        p = (p / (1.0 + gammas.sum())).clamp(EPS_P, 1 - EPS_P)
        return torch.log(p) - torch.log1p(-p)

    def forward(self, feat, scale_index=None, input_size=None):
        if self.training and scale_index is not None:
            return self.forward_train(feat, scale_index, input_size)
        return self.forward_infer(feat, input_size)


def gms_forward_train(module: GMS, feat, scale_index, input_size=None):
    return module.forward_train(feat, scale_index, input_size)


def gms_forward_infer(module: GMS, feat, input_size=None):
    return module.forward_infer(feat, input_size)

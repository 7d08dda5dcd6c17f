"""Spatial perceptive fusion of RGB and depth features, with edge attention."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage

from uta.core import ShapeError
from uta.layers import ConvBlock


class SPM(nn.Module):
    def __init__(self, channels=64):
        super().__init__()
        c = channels
        self.channels = c
        self.edge = nn.Sequential(
            ConvBlock(2 * c, c, k=1),
            ConvBlock(c, c, k=3),
            nn.Conv2d(c, 1, 1),
        )
        self.reduce = ConvBlock(2 * c, c)

    def depth_attend(self, f_rgb, f_depth):
        return torch.cat([f_rgb * torch.sigmoid(f_depth) + f_rgb, f_depth], dim=1)

    def forward(self, f_rgb, f_depth):
        """Return ``(fused, edge_logits)``; the logits are supervised by the edge loss."""
        if f_rgb.shape != f_depth.shape:
            raise ShapeError(f"SPM inputs differ: {tuple(f_rgb.shape)} vs {tuple(f_depth.shape)}")
        if f_rgb.shape[1] != self.channels:
            raise ShapeError(f"SPM expects {self.channels} channels, got {f_rgb.shape[1]}")
        f_dsa = self.depth_attend(f_rgb, f_depth)
        edge_logits = self.edge(f_dsa)
        r = self.reduce(f_dsa)
        return r * torch.sigmoid(edge_logits) + r, edge_logits


def spm_fuse(module: SPM, f_rgb, f_depth):
    return module(f_rgb, f_depth)


_CROSS = ndimage.generate_binary_structure(2, 1)


def boundary_pixels(mask) -> np.ndarray:
    """Foreground pixels with a background 4-neighbour; outside the image counts as background.

    On a two-valued image this is what an edge detector's thinned output
    reduces to, and unlike a gradient detector with non-maximum suppression
    it commutes exactly with flips.
    """
    m = np.asarray(mask) > 0
    inner = ndimage.binary_erosion(m, structure=_CROSS, border_value=0)
    return m & ~inner


def make_edge_target(mask, kernel: int = 5) -> np.ndarray:
    """Boundary of a binary (H, W) mask widened to a ``kernel``-pixel band, as uint8 {0, 1}."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"expected (H, W) mask, got {mask.shape}")
    edges = boundary_pixels(mask)
    if kernel > 1 and edges.any():
        edges = ndimage.binary_dilation(edges, structure=np.ones((kernel, kernel), bool))
    return edges.astype(np.uint8)

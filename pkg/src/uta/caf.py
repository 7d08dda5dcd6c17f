"""Channel-aware fusion of two feature maps from different levels of one modality."""
from __future__ import annotations

import torch
import torch.nn as nn

from uta.core import ShapeError, resize_bilinear
from uta.layers import ConvBlock


def _upsample_pair(a, b):
    h = max(a.shape[-2], b.shape[-2])
    w = max(a.shape[-1], b.shape[-1])
    return resize_bilinear(a, h, w), resize_bilinear(b, h, w)


class CAF(nn.Module):
    """Fuse ``f_alpha`` and ``f_beta`` into a ``channels``-wide map at the larger resolution.

    Steps:
      1. encode both inputs to ``channels`` and stack [a, b, a*b];
      2. global-average-pool the stack, pass through a linear map and a
         sigmoid to get per-channel gates, and gate the stack;
      3. decode the gated stack twice (3C -> C), add each to one encoded
         input, reduce, concatenate and project back to C.

    ``identity=True`` replaces the two input encoders with identities (inputs
    must then already have ``channels`` channels) so the stacking and
    gating arithmetic can be checked by hand.
    """

    def __init__(self, in_alpha, in_beta, channels=64, identity=False):
        super().__init__()
        c = channels
        self.in_alpha, self.in_beta, self.channels = in_alpha, in_beta, c
        if identity:
            if in_alpha != c or in_beta != c:
                raise ShapeError("identity encoders need input width == channels")
            self.enc_alpha = nn.Identity()
            self.enc_beta = nn.Identity()
        else:
            self.enc_alpha = ConvBlock(in_alpha, c)
            self.enc_beta = ConvBlock(in_beta, c)
        self.phi = nn.Linear(3 * c, 3 * c)
        self.dec_u1 = ConvBlock(3 * c, c)
        self.dec_u2 = ConvBlock(3 * c, c)
        self.red_v1 = ConvBlock(c, c)
        self.red_v2 = ConvBlock(c, c)
        self.head = ConvBlock(2 * c, c)

    def stack(self, f_alpha, f_beta):
        """Return encoded inputs and their [a, b, a*b] concatenation."""
        if f_alpha.dim() != 4 or f_beta.dim() != 4:
            raise ShapeError("CAF inputs must be 4-D")
        if f_alpha.shape[1] != self.in_alpha or f_beta.shape[1] != self.in_beta:
            raise ShapeError(
                f"CAF expects ({self.in_alpha}, {self.in_beta}) channels, "
                f"got ({f_alpha.shape[1]}, {f_beta.shape[1]})"
            )
        f_alpha, f_beta = _upsample_pair(f_alpha, f_beta)
        ea = self.enc_alpha(f_alpha)
        eb = self.enc_beta(f_beta)
        return ea, eb, torch.cat([ea, eb, ea * eb], dim=1)

    def attend(self, f_ca):
        a = f_ca.mean(dim=(2, 3))
        gate = torch.sigmoid(self.phi(a))
        return f_ca * gate[:, :, None, None]

    def forward(self, f_alpha, f_beta):
        ea, eb, f_ca = self.stack(f_alpha, f_beta)
        u = self.attend(f_ca)
        va = self.red_v1(ea + self.dec_u1(u))
        vb = self.red_v2(eb + self.dec_u2(u))
        return self.head(torch.cat([va, vb], dim=1))


def caf_fuse(module: CAF, f_alpha, f_beta):
    return module(f_alpha, f_beta)


class MulFusion(nn.Module):
    """Baseline cross-level fusion used when CAF is switched off: project both, multiply."""

    def __init__(self, in_alpha, in_beta, channels=64):
        super().__init__()
        self.enc_alpha = ConvBlock(in_alpha, channels)
        self.enc_beta = ConvBlock(in_beta, channels)

    def forward(self, f_alpha, f_beta):
        f_alpha, f_beta = _upsample_pair(f_alpha, f_beta)
        return self.enc_alpha(f_alpha) * self.enc_beta(f_beta)

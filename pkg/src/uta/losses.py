"""Training objective: saliency BCE/IoU, log-depth MSE, edge BCE, error-weighted BCE."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from uta.core import EPS_P, ShapeError, resize_bilinear


class ArityError(ValueError):
    pass


def _check(p, y):
    if p.shape != y.shape:
        raise ShapeError(f"prediction {tuple(p.shape)} vs target {tuple(y.shape)}")


def pixel_bce(p, y, positive_only=False):
    p = p.clamp(EPS_P, 1 - EPS_P)
    if positive_only:
        return -y * torch.log(p)
    return -(y * torch.log(p) + (1 - y) * torch.log1p(-p))


def bce_loss(p, y, positive_only=False):
    _check(p, y)
    return pixel_bce(p, y, positive_only).mean()


def iou_loss(p, y):
    _check(p, y)
    dims = tuple(range(1, p.dim()))
    inter = (y * p).sum(dims)
    union = (y + p - y * p).sum(dims)
    return (1 - (inter + 1) / (union + 1)).mean()


def depth_loss(p_d, y_d):
    _check(p_d, y_d)
    if (p_d <= 0).any() or (y_d <= 0).any():
        raise ValueError("depth maps must be strictly positive")
    diff = torch.log(y_d) - torch.log(p_d)
    return (diff**2).flatten(1).mean(1).mean()


def fit_target(y, size):
    """Max-pool a binary target down to ``size`` so thin structures survive."""
    if tuple(y.shape[-2:]) == tuple(size):
        return y
    return F.adaptive_max_pool2d(y, size)


def edge_loss(edge_logits, y_e, positive_only=False):
    if len(edge_logits) != 4:
        raise ArityError(f"expected 4 edge maps, got {len(edge_logits)}")
    total = 0
    for logit in edge_logits:
        target = fit_target(y_e, logit.shape[-2:])
        p = torch.sigmoid(logit).clamp(EPS_P, 1 - EPS_P)
        total = total + bce_loss(p, target, positive_only)
    return total


def dec_loss(p_s, y_s, e, positive_only=False):
    _check(p_s, y_s)
    _check(p_s, e)
    denom = e.sum()
    if denom <= 0:
        return p_s.sum() * 0.0
    return (e * pixel_bce(p_s, y_s, positive_only)).sum() / denom


def saliency_loss(p_s, y_s, e=None, positive_only=False):
    loss = bce_loss(p_s, y_s, positive_only) + iou_loss(p_s, y_s)
    if e is not None:
        loss = loss + dec_loss(p_s, y_s, e, positive_only)
    return loss


def mls_loss(side_outputs, y_s, e, lambdas, positive_only=False):
    """Weighted sum of the per-stage saliency losses; side outputs are upsampled to the mask."""
    if len(side_outputs) != len(lambdas):
        raise ArityError(f"{len(side_outputs)} side outputs for {len(lambdas)} weights")
    total = 0
    for lam, p in zip(lambdas, side_outputs):
        p = resize_bilinear(p, *y_s.shape[-2:])
        total = total + lam * saliency_loss(p, y_s, e, positive_only)
    return total


def gms_loss(p_s, y_s, e=None, positive_only=False):
    return saliency_loss(p_s, y_s, e, positive_only)


@dataclass
class LossBundle:
    l_depth: torch.Tensor
    l_edge: torch.Tensor
    l_mls: torch.Tensor
    l_gms: torch.Tensor
    l_bce: torch.Tensor | float = 0.0
    l_iou: torch.Tensor | float = 0.0
    l_dec: torch.Tensor | float = 0.0

    @property
    def l_sum(self):
        return self.l_depth + self.l_edge + self.l_mls + self.l_gms

    def as_floats(self) -> dict:
        names = ("l_bce", "l_iou", "l_depth", "l_edge", "l_dec", "l_mls", "l_gms", "l_sum")
        return {n: float(v.detach()) if isinstance(v := getattr(self, n), torch.Tensor) else float(v)
                for n in names}


def total_loss(l_depth, l_edge, l_mls, l_gms, **parts) -> LossBundle:
    return LossBundle(l_depth, l_edge, l_mls, l_gms, **parts)

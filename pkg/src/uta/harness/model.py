"""Full network wiring and the two auxiliary variants used for depth-quality ranking."""
from __future__ import annotations

import torch
import torch.nn as nn

from uta.backbone import ASPP, build_backbone
from uta.caf import CAF, MulFusion
from uta.core import Config, resize_bilinear
from uta.depthbranch import DepthDecoder
from uta.gms import GMS
from uta.layers import ConvBlock
from uta.spm import SPM

VARIANTS = ("uta", "dual", "depth_only")


class UTANet(nn.Module):
    """Shared encoder -> depth decoder + saliency decoder -> gated multi-scale predictor.

    Saliency decoding runs deep to shallow. Level 5 starts from the ASPP map;
    at levels 5..2 the running map is fused with the depth decoder's map of
    the same level (SPM, or addition when SPM is off), and between levels it
    is merged with the next shallower encoder stage (CAF, or multiplication
    when CAF is off).
    """

    def __init__(self, cfg: Config, extra_encoder=False):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.backbone = build_backbone(cfg.backbone, cfg.backbone_weights or None)
        chans = self.backbone.channels
        self.aspp = ASPP(chans[4], c, cfg.aspp_rates)
        # depth encoder for the dual-input variant; its stages are summed into the RGB stages
        self.depth_encoder = build_backbone(cfg.backbone) if extra_encoder else None
        self.use_dac, self.use_spm = cfg.use_dac, cfg.use_dac and cfg.use_spm
        if self.use_dac:
            self.depth_entry = ConvBlock(c, c)
            self.depth_decoder = DepthDecoder(chans, c, cfg.use_caf)
        if self.use_spm:
            self.spms = nn.ModuleList(SPM(c) for _ in range(4))
        fuse = CAF if cfg.use_caf else MulFusion
        self.fuse = nn.ModuleList(fuse(c, chans[i], c) for i in range(4))
        self.sides = nn.ModuleList(nn.Conv2d(c, 1, 3, padding=1) for _ in range(5))
        self.gms = GMS(c, cfg.scales, cfg.gammas if cfg.use_gms else [0.0] * len(cfg.scales),
                       cfg.gms_kernel, cfg.gms_fuse)
        if not cfg.use_gms:
            self.gms.heads = nn.ModuleList()

    def backbone_parameters(self):
        params = list(self.backbone.parameters())
        if self.depth_encoder is not None:
            params += list(self.depth_encoder.parameters())
        return params

    def encode(self, rgb, depth=None):
        stages = self.backbone(rgb)
        if self.depth_encoder is not None:
            if depth is None:
                raise ValueError("dual-input variant needs a depth map")
            dstages = self.depth_encoder(depth.expand(-1, 3, -1, -1))
            stages = [a + b for a, b in zip(stages, dstages)]
        return stages

    def forward(self, rgb, scale_index=None, input_size=None, depth=None):
        """Return a dict of outputs.

        ``logits`` is the final prediction at input resolution; ``sides`` are
        the five side-output logits (finest first); ``p_d`` and ``edges``
        are present only when the depth branch (and SPM) are on.
        """
        size = rgb.shape[-2:]
        stages = self.encode(rgb, depth)
        ctx = self.aspp(stages[4])
        out = {}
        dfeats = None
        if self.use_dac:
            p_d, dfeats = self.depth_decoder(stages, self.depth_entry(ctx), size)
            out["p_d"] = p_d
        edges = []
        g = ctx
        levels = [None] * 5
        for lvl in (4, 3, 2, 1, 0):
            if lvl < 4:
                g = self.fuse[lvl](g, stages[lvl])
            if lvl >= 1 and dfeats is not None:
                d = dfeats[lvl - 1]
                if self.use_spm:
                    g, e = self.spms[lvl - 1](g, d)
                    edges.append(e)
                else:
                    g = g + d
            levels[lvl] = g
        out["edges"] = edges[::-1]
        out["sides"] = [resize_bilinear(head(f), *size) for head, f in zip(self.sides, levels)]
        feat = levels[0]
        if self.training and scale_index is not None and self.cfg.use_gms:
            logits = self.gms.forward_train(feat, scale_index, input_size)
        elif self.cfg.use_gms:
            logits = self.gms.forward_infer(feat, input_size or self.cfg.base_size)
        else:
            logits = self.gms.classifier(feat)
        out["logits"] = resize_bilinear(logits, *size)
        return out


def build_model(cfg: Config, variant="uta", seed=None) -> UTANet:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    torch.manual_seed(cfg.seed if seed is None else seed)
    if variant == "depth_only":
        # saliency from depth alone: no depth supervision branch, depth fed as a 3-channel image
        return UTANet(cfg.replace(use_dac=False, use_spm=False))
    return UTANet(cfg, extra_encoder=variant == "dual")


def model_input(variant, batch):
    """Map a batch to ``(image, depth_kwarg)`` for the given variant."""
    if variant == "depth_only":
        return batch["depth"].expand(-1, 3, -1, -1), None
    if variant == "dual":
        return batch["rgb"], batch["depth"]
    return batch["rgb"], None

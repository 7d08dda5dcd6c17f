"""Shared encoder (five stages) and the ASPP context head."""
from __future__ import annotations

import logging

import torch
import torch.nn as nn
import torchvision

from uta.core import ShapeError
from uta.layers import ConvBlock
from uta.weights import WeightFileError, load_arrays, save_arrays

log = logging.getLogger(__name__)

TINY_CHANNELS = (8, 16, 32, 64, 64)
RESNET_CHANNELS = (64, 256, 512, 1024, 2048)


class TinyBackbone(nn.Module):
    """Five conv-BN-ReLU stages at strides 1, 2, 4, 8, 16. For desk-scale runs only."""

    channels = TINY_CHANNELS
    multiple = 16

    def __init__(self):
        super().__init__()
        chans = (3,) + self.channels
        self.stages = nn.ModuleList(
            nn.Sequential(
                ConvBlock(chans[i], chans[i + 1], stride=1 if i == 0 else 2),
                ConvBlock(chans[i + 1], chans[i + 1]),
            )
            for i in range(5)
        )

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ResNet50Backbone(nn.Module):
    """torchvision ResNet-50 body; taps stem output and the end of each residual stage."""

    channels = RESNET_CHANNELS
    multiple = 32

    def __init__(self, weights=None):
        super().__init__()
        net = torchvision.models.resnet50(weights=None)
        del net.fc, net.avgpool
        self.resnet = net
        if weights:
            self.load_weights(weights)

    def load_weights(self, path):
        arrays, meta = load_arrays(path)
        prefix = "resnet."
        state = {k[len(prefix):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)}
        missing, unexpected = self.resnet.load_state_dict(state, strict=False)
        if missing:
            raise WeightFileError(f"{path}: missing backbone tensors, e.g. {missing[:3]}")
        if unexpected:
            log.warning("ignoring %d unexpected tensors in %s", len(unexpected), path)

    def forward(self, x):
        r = self.resnet
        f1 = r.relu(r.bn1(r.conv1(x)))
        f2 = r.layer1(r.maxpool(f1))
        f3 = r.layer2(f2)
        f4 = r.layer3(f3)
        f5 = r.layer4(f4)
        return [f1, f2, f3, f4, f5]


def convert_torchvision_resnet50(src, dst) -> None:
    """Repack a published ResNet-50 ``state_dict`` (.pth) into the weight container."""
    state = torch.load(src, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    arrays = {f"resnet.{k}": v for k, v in state.items() if not k.startswith("fc.")}
    save_arrays(dst, arrays, {"kind": "resnet50", "source": str(src)})


def build_backbone(kind: str, weights=None, seed: int | None = None) -> nn.Module:
    if seed is not None:
        torch.manual_seed(seed)
    if kind == "tiny":
        return TinyBackbone()
    if kind == "resnet50":
        return ResNet50Backbone(weights)
    raise ValueError(f"unknown backbone kind {kind!r}")


def extract_stages(backbone: nn.Module, rgb: torch.Tensor) -> list:
    h, w = rgb.shape[-2:]
    m = backbone.multiple
    if h % m or w % m:
        raise ShapeError(f"input {h}x{w} not divisible by {m}")
    return backbone(rgb)


class ASPP(nn.Module):
    def __init__(self, in_ch, out_ch, rates=(2, 4, 6)):
        super().__init__()
        self.branches = nn.ModuleList(
            [ConvBlock(in_ch, out_ch, k=1)] + [ConvBlock(in_ch, out_ch, k=3, dilation=r) for r in rates]
        )
        # no BatchNorm here: a 1x1 map with batch size 1 has no batch statistics
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_ch, out_ch, 1),
            nn.ReLU(inplace=True),
        )
        self.project = ConvBlock(out_ch * (len(rates) + 2), out_ch, k=1)

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        # broadcast, not interpolate: the pooled branch is spatially constant
        outs.append(self.pool(x).expand(-1, -1, *x.shape[-2:]))
        return self.project(torch.cat(outs, dim=1))

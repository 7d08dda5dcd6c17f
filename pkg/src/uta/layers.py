import torch.nn as nn


class ConvBlock(nn.Sequential):
    """kxk conv -> BatchNorm -> ReLU, spatial size preserved for stride 1."""

    def __init__(self, in_ch, out_ch, k=3, stride=1, dilation=1):
        pad = dilation * (k // 2)
        super().__init__(
            nn.Conv2d(in_ch, out_ch, k, stride=stride, padding=pad, dilation=dilation, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

"""MobileNetV3 building blocks."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F


def make_divisible(value: float, divisor: int = 8, min_value: int | None = None) -> int:
    min_value = divisor if min_value is None else min_value
    new = max(min_value, int(value + divisor / 2) // divisor * divisor)
    if new < 0.9 * value:
        new += divisor
    return new


def activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "hswish":
        return nn.Hardswish()
    if name == "identity":
        return nn.Identity()
    raise ValueError(f"unknown activation {name!r}")


class ConvBNAct(nn.Sequential):
    """Bias-free convolution, batch norm, activation."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, stride: int = 1,
                 groups: int = 1, act: str = "relu"):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel_size, stride, (kernel_size - 1) // 2,
                      groups=groups, bias=False),
            nn.BatchNorm2d(out_ch),
            activation(act),
        )


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, squeeze: int | None = None):
        super().__init__()
        squeeze = squeeze or make_divisible(channels // 4, 8)
        self.fc1 = nn.Conv2d(channels, squeeze, 1)
        self.fc2 = nn.Conv2d(squeeze, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        scale = F.adaptive_avg_pool2d(x, 1)
        scale = F.hardsigmoid(self.fc2(F.relu(self.fc1(scale))))
        return x * scale


class Bottleneck(nn.Module):
    """Inverted residual: expand 1x1, depthwise kxk, optional SE, project 1x1.

    The shortcut is used when stride is 1 and input and output widths match.
    """

    def __init__(self, in_ch: int, hidden: int, out_ch: int, kernel_size: int = 3,
                 stride: int = 1, use_se: bool = False, act: str = "relu"):
        super().__init__()
        self.in_ch, self.hidden, self.out_ch = in_ch, hidden, out_ch
        self.stride = stride
        self.use_residual = stride == 1 and in_ch == out_ch
        self.expand = ConvBNAct(in_ch, hidden, 1, act=act) if hidden != in_ch else nn.Identity()
        self.depthwise = ConvBNAct(hidden, hidden, kernel_size, stride, groups=hidden, act=act)
        self.se = SqueezeExcite(hidden) if use_se else nn.Identity()
        self.project = ConvBNAct(hidden, out_ch, 1, act="identity")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.project(self.se(self.depthwise(self.expand(x))))
        return x + out if self.use_residual else out


def fusion_bottleneck(in_ch: int, out_ch: int, expansion: float) -> Bottleneck:
    """Bottleneck used by the fusion and decoder stages (3x3, hardswish, no SE)."""
    hidden = max(out_ch, make_divisible(out_ch * expansion, 4, 4))
    return Bottleneck(in_ch, hidden, out_ch, 3, 1, use_se=False, act="hswish")

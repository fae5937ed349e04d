"""Encoder: MobileNetV3-Large stem plus its first eleven bottlenecks.

The encoder returns one feature map per stride level, tapped after the last
block of that level.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from ..exceptions import ConfigError
from .layers import Bottleneck, ConvBNAct, make_divisible


class BlockSpec(NamedTuple):
    kernel: int
    hidden: int
    out: int
    se: bool
    act: str
    stride: int


# grouped by stride level 2, 4, 8, 16
MOBILENETV3_LARGE_11 = (
    (BlockSpec(3, 16, 16, False, "relu", 1),),
    (BlockSpec(3, 64, 24, False, "relu", 2),
     BlockSpec(3, 72, 24, False, "relu", 1)),
    (BlockSpec(5, 72, 40, True, "relu", 2),
     BlockSpec(5, 120, 40, True, "relu", 1),
     BlockSpec(5, 120, 40, True, "relu", 1)),
    (BlockSpec(3, 240, 80, False, "hswish", 2),
     BlockSpec(3, 200, 80, False, "hswish", 1),
     BlockSpec(3, 184, 80, False, "hswish", 1),
     BlockSpec(3, 184, 80, False, "hswish", 1),
     BlockSpec(3, 480, 112, True, "hswish", 1)),
)
MOBILENETV3_STRIDES = (2, 4, 8, 16)
MOBILENETV3_CHANNELS = (16, 24, 40, 112)


def compact_stages(channels: tuple[int, ...], expansion: float, blocks_per_stage: int,
                   use_se: bool) -> tuple[tuple[BlockSpec, ...], ...]:
    """A scaled-down stage table following the same pattern as MobileNetV3."""
    stages = [(BlockSpec(3, channels[0], channels[0], False, "relu", 1),)]
    for i in range(1, len(channels)):
        act = "relu" if i < 3 else "hswish"
        se = use_se and i >= 2
        blocks = [BlockSpec(3, make_divisible(channels[i - 1] * expansion, 4, 4), channels[i], se, act, 2)]
        for _ in range(blocks_per_stage - 1):
            blocks.append(BlockSpec(3, make_divisible(channels[i] * expansion, 4, 4), channels[i], se, act, 1))
        stages.append(tuple(blocks))
    return tuple(stages)


class Encoder(nn.Module):
    def __init__(self, stages: tuple[tuple[BlockSpec, ...], ...], stem_channels: int):
        super().__init__()
        self.stem = ConvBNAct(3, stem_channels, 3, stride=2, act="hswish")
        self.stages = nn.ModuleList()
        in_ch = stem_channels
        for stage in stages:
            blocks = []
            for spec in stage:
                blocks.append(Bottleneck(in_ch, spec.hidden, spec.out, spec.kernel,
                                         spec.stride, spec.se, spec.act))
                in_ch = spec.out
            self.stages.append(nn.Sequential(*blocks))
        self.out_channels = tuple(stage[-1].out for stage in stages)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = self.stem(x)
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


def build_encoder(config) -> Encoder:
    """Encoder for a :class:`~insinet.nn.model.NetworkConfig`."""
    if config.backbone == "mobilenetv3_large":
        if tuple(config.strides) != MOBILENETV3_STRIDES or tuple(config.channels) != MOBILENETV3_CHANNELS:
            raise ConfigError("the mobilenetv3_large backbone fixes strides (2,4,8,16) "
                              "and channels (16,24,40,112)")
        stages = MOBILENETV3_LARGE_11
    elif config.backbone == "compact":
        stages = compact_stages(tuple(config.channels), config.expansion,
                                config.blocks_per_stage, config.use_se)
    else:
        raise ConfigError(f"unknown backbone {config.backbone!r}")
    encoder = Encoder(stages, config.channels[0])
    if encoder.out_channels != tuple(config.channels):
        raise ConfigError(f"encoder widths {encoder.out_channels} != {tuple(config.channels)}")
    return encoder

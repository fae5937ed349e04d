"""Main-path decoder, MDSA branch predictions and MSA aggregation."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn
from torch.nn import functional as F

from ..exceptions import ContractError, ShapeError
from .fusion import CNFOutput
from .layers import fusion_bottleneck


class BranchHead(nn.Module):
    """1x1 convolution from a fused scale feature to 2-class logits."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, 2, 1)

    def forward(self, cnf: CNFOutput) -> torch.Tensor:
        return self.conv(cnf.fused)


def mdsa_attention(cnf_attention: torch.Tensor, branch_logits: torch.Tensor) -> torch.Tensor:
    """Gate the deep-supervised attention by the branch's change probability."""
    if cnf_attention.shape[-2:] != branch_logits.shape[-2:]:
        raise ShapeError(f"attention {tuple(cnf_attention.shape)} vs logits {tuple(branch_logits.shape)}")
    change_prob = torch.softmax(branch_logits, dim=1)[:, 1:2]
    return cnf_attention * change_prob


def reinforce(skip: torch.Tensor, attention: torch.Tensor) -> torch.Tensor:
    """``skip * (1 + attention)``, attention broadcast over channels."""
    if skip.shape[-2:] != attention.shape[-2:] or attention.shape[1] != 1:
        raise ShapeError(f"skip {tuple(skip.shape)} vs attention {tuple(attention.shape)}")
    return skip * (1.0 + attention)


def upsample(x: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


class Decoder(nn.Module):
    """U-shaped decoder from the coarsest skip back to full resolution."""

    def __init__(self, channels: Sequence[int], expansion: float = 2.0):
        super().__init__()
        self.channels = tuple(channels)
        self.blocks = nn.ModuleList(
            fusion_bottleneck(channels[i + 1] + channels[i], channels[i], expansion)
            for i in reversed(range(len(channels) - 1))
        )
        self.classifier = nn.Conv2d(channels[0], 2, 1)

    def forward(self, skips: Sequence[torch.Tensor], out_hw: Sequence[int]) -> torch.Tensor:
        if len(skips) != len(self.channels):
            raise ShapeError(f"decoder expects {len(self.channels)} skips, got {len(skips)}")
        x = skips[-1]
        for block, skip in zip(self.blocks, reversed(skips[:-1])):
            x = upsample(x, skip.shape[-2:])
            x = block(torch.cat([x, skip], dim=1))
        return upsample(self.classifier(x), out_hw)


class MultiScaleAggregation(nn.Module):
    """Upsample all preliminary predictions, then 1x1 and 3x3 convolutions."""

    def __init__(self, n_branches: int, hidden: int = 16):
        super().__init__()
        self.n_branches = n_branches
        self.mix = nn.Conv2d(2 * (n_branches + 1), hidden, 1)
        self.out = nn.Conv2d(hidden, 2, 3, padding=1)

    def forward(self, main: torch.Tensor, branches: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(branches) != self.n_branches:
            raise ContractError(f"MSA expects {self.n_branches} branch predictions, got {len(branches)}")
        hw = main.shape[-2:]
        stacked = torch.cat([main, *(upsample(b, hw) for b in branches)], dim=1)
        return self.out(F.relu(self.mix(stacked)))

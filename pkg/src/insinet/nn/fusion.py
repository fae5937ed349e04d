"""Per-scale temporal fusion (TF) and centre/neighborhood fusion (CNF)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from ..exceptions import ShapeError
from .layers import fusion_bottleneck


@dataclass
class TFOutput:
    fused: torch.Tensor
    enhanced_t1: torch.Tensor
    enhanced_t2: torch.Tensor


@dataclass
class CNFOutput:
    fused: torch.Tensor
    attention: torch.Tensor


def _check_same(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


class TemporalFusion(nn.Module):
    """Fuse a T1/T2 feature pair and feed a correction back to both streams.

    The correction is a residual gate, ``f * (1 + feedback(fused))``.  An
    additive correction shared by both streams would cancel in every later
    ``|t1 - t2|`` and never receive gradient.  ``feedback`` is
    zero-initialised, so at construction the enhanced streams equal the
    inputs exactly.
    """

    def __init__(self, channels: int, expansion: float = 2.0):
        super().__init__()
        self.fuse = fusion_bottleneck(2 * channels, channels, expansion)
        self.feedback = nn.Conv2d(channels, channels, 1, bias=False)
        nn.init.zeros_(self.feedback.weight)

    def forward(self, f_t1: torch.Tensor, f_t2: torch.Tensor) -> TFOutput:
        _check_same(f_t1, f_t2, "TF inputs")
        fused = self.fuse(torch.cat([f_t1, f_t2], dim=1))
        r = self.feedback(fused)
        gate = 1.0 + r
        return TFOutput(fused, f_t1 * gate, f_t2 * gate)


def difference_fusion(f_t1: torch.Tensor, f_t2: torch.Tensor) -> TFOutput:
    """Parameter-free stand-in for TF: fused = |f_t1 - f_t2|, streams untouched."""
    _check_same(f_t1, f_t2, "difference inputs")
    return TFOutput(torch.abs(f_t1 - f_t2), f_t1, f_t2)


def central_third_grid(out_hw: tuple[int, int], batch: int, dtype, device) -> torch.Tensor:
    """``grid_sample`` grid mapping an ``out_hw`` raster onto the window [1/3, 2/3]^2."""
    axes = []
    for n in out_hw:
        u = 1.0 / 3.0 + (torch.arange(n, dtype=torch.float64) + 0.5) / (3.0 * n)
        axes.append(2.0 * u - 1.0)
    gy, gx = torch.meshgrid(axes[0], axes[1], indexing="ij")
    grid = torch.stack([gx, gy], dim=-1).to(dtype=dtype, device=device)
    return grid.unsqueeze(0).expand(batch, -1, -1, -1)


def resample_central_third(x: torch.Tensor, out_hw: tuple[int, int]) -> torch.Tensor:
    """Crop the central third of ``x`` and bilinearly resize it to ``out_hw`` in one step."""
    grid = central_third_grid(out_hw, x.shape[0], x.dtype, x.device)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode="border", align_corners=False)


FUSION_MODES = ("cnf", "concat", "center")


class ScaleFusion(nn.Module):
    """Per-scale fusion feeding one branch path.

    ``mode="cnf"`` is the CNF module: centre and neighborhood difference
    features plus both TF fused maps.  ``"concat"`` uses the raw enhanced
    streams of both pairs instead of differences, and ``"center"`` the centre
    pair alone; these two exist for the ablation rows.
    """

    def __init__(self, channels: int, mode: str = "cnf", expansion: float = 2.0):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}")
        self.mode = mode
        n_inputs = {"cnf": 4, "concat": 6, "center": 3}[mode]
        self.fuse = fusion_bottleneck(n_inputs * channels, channels, expansion)
        self.to_attention = nn.Conv2d(channels, 1, 1)

    def forward(self, center: TFOutput, neigh: TFOutput | None = None) -> CNFOutput:
        hw = tuple(center.fused.shape[-2:])
        if self.mode == "center":
            parts = [center.enhanced_t1, center.enhanced_t2, center.fused]
        else:
            if neigh is None:
                raise ShapeError(f"{self.mode} fusion needs neighborhood features")
            _check_same(center.fused, neigh.fused, "centre/neighborhood features")
            if self.mode == "cnf":
                d_center = torch.abs(center.enhanced_t1 - center.enhanced_t2)
                d_neigh = torch.abs(neigh.enhanced_t1 - neigh.enhanced_t2)
                parts = [d_center, center.fused,
                         resample_central_third(d_neigh, hw),
                         resample_central_third(neigh.fused, hw)]
            else:
                parts = [center.enhanced_t1, center.enhanced_t2, center.fused,
                         resample_central_third(neigh.enhanced_t1, hw),
                         resample_central_third(neigh.enhanced_t2, hw),
                         resample_central_third(neigh.fused, hw)]
        fused = self.fuse(torch.cat(parts, dim=1))
        return CNFOutput(fused, torch.sigmoid(self.to_attention(fused)))

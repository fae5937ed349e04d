"""Finite-difference verification of analytic gradients, in double precision."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .exceptions import GradientCheckError
from .nn.model import INSINet, NetworkConfig, parameter_groups
from .training import cross_entropy_loss

ZERO_GRADIENT = 1e-10


@dataclass
class CoordinateCheck:
    group: str
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def zero(self) -> bool:
        return abs(self.analytic) < ZERO_GRADIENT

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric))
        if scale < ZERO_GRADIENT:
            return 0.0
        return abs(self.analytic - self.numeric) / scale


@dataclass
class GradCheckReport:
    checks: list[CoordinateCheck] = field(default_factory=list)
    tolerance: float = 1e-4
    step: float = 1e-5

    @property
    def per_group(self) -> dict[str, float]:
        worst: dict[str, float] = {}
        for c in self.checks:
            worst[c.group] = max(worst.get(c.group, 0.0), self._error(c))
        return worst

    @property
    def zero_flagged(self) -> list[CoordinateCheck]:
        return [c for c in self.checks if c.zero]

    @property
    def max_rel_error(self) -> float:
        return max((self._error(c) for c in self.checks), default=0.0)

    def _error(self, c: CoordinateCheck) -> float:
        # a zero analytic gradient passes only if the numeric one is zero too
        if c.zero:
            return 0.0 if abs(c.numeric) < ZERO_GRADIENT else float("inf")
        return c.rel_error

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    @property
    def failing_groups(self) -> list[str]:
        return sorted(g for g, e in self.per_group.items() if e > self.tolerance)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "step": self.step,
            "coordinates": len(self.checks),
            "max_rel_error": self.max_rel_error,
            "per_group": self.per_group,
            "zero_gradient_coordinates": [f"{c.name}{list(c.index)}" for c in self.zero_flagged],
            "failing_groups": self.failing_groups,
        }


def check_gradients(loss_fn: Callable[[], torch.Tensor],
                    groups: dict[str, Sequence[tuple[str, nn.Parameter]]],
                    coords_per_group: int = 4, min_total: int = 50,
                    step: float = 1e-5, tolerance: float = 1e-4,
                    seed: int = 0) -> GradCheckReport:
    """Compare autograd against central differences on sampled coordinates.

    ``loss_fn`` must be a deterministic function of the parameters.  At least
    ``coords_per_group`` coordinates are drawn from every group, and more are
    drawn round-robin until ``min_total`` is reached.
    """
    rng = np.random.default_rng(seed)
    params = [p for plist in groups.values() for _, p in plist]
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {id(p): p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
                for p in params}

    def draw(group: str) -> tuple[str, nn.Parameter, tuple[int, ...]]:
        plist = groups[group]
        sizes = np.array([p.numel() for _, p in plist], dtype=float)
        k = rng.choice(len(plist), p=sizes / sizes.sum())
        name, p = plist[k]
        flat = int(rng.integers(p.numel()))
        return name, p, tuple(int(i) for i in np.unravel_index(flat, tuple(p.shape)))

    picks = []
    names = sorted(groups)
    while len(picks) < max(min_total, coords_per_group * len(names)):
        for g in names:
            picks.append((g, *draw(g)))
    report = GradCheckReport(tolerance=tolerance, step=step)
    with torch.no_grad():
        for group, name, p, index in picks:
            original = p[index].item()
            p[index] = original + step
            plus = loss_fn().item()
            p[index] = original - step
            minus = loss_fn().item()
            p[index] = original
            numeric = (plus - minus) / (2 * step)
            report.checks.append(CoordinateCheck(group, name, index, analytic[id(p)][index].item(), numeric))
    return report


def tiny_config(seed: int = 0) -> NetworkConfig:
    return NetworkConfig.tiny(patch_size=16, n_scales=2, width=4, seed=seed)


def gradient_check(config: NetworkConfig | None = None, seed: int = 0, batch: int = 2,
                   coords_per_group: int = 4, min_total: int = 50, step: float = 1e-5,
                   tolerance: float = 1e-4, raise_on_failure: bool = False) -> GradCheckReport:
    """Check the full network's loss gradients on random data.

    The zero-initialised TF feedback weights are first set to small random
    values so that the feedback path carries gradient into the encoders.
    Batch norm runs in training mode (batch statistics).
    """
    config = config or tiny_config(seed)
    model = INSINet(config).double().train()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if ".feedback." in name:
                p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    s = config.patch_size
    images = [torch.rand(batch, 3, s, s, generator=gen, dtype=torch.float64) for _ in range(4)]
    label = (torch.rand(batch, s, s, generator=gen) > 0.5).long()
    inputs = images if config.components.quadruplet else images[:2]

    def loss_fn() -> torch.Tensor:
        return cross_entropy_loss(model(*inputs), label)

    report = check_gradients(loss_fn, parameter_groups(model), coords_per_group, min_total,
                             step, tolerance, seed)
    if raise_on_failure and not report.passed:
        raise GradientCheckError(
            f"max relative error {report.max_rel_error:.3g} > {tolerance}; "
            f"failing groups: {', '.join(report.failing_groups)}"
        )
    return report

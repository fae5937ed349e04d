"""INSINet: quadruple encoders, TF/CNF fusion, MDSA branches and MSA aggregation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..exceptions import ConfigError, ShapeError
from .backbone import build_encoder
from .fusion import CNFOutput, ScaleFusion, TemporalFusion, TFOutput, difference_fusion
from .head import BranchHead, Decoder, MultiScaleAggregation, mdsa_attention, reinforce


@dataclass(frozen=True)
class Components:
    """Which INSINet parts are switched on (one row of the ablation table)."""

    tf: bool = True
    mdsa: bool = True
    quadruplet: bool = True
    cnf: bool = True

    def __post_init__(self):
        if self.cnf and not self.quadruplet:
            raise ConfigError("CNF needs the quadruplet (neighborhood) encoders")
        if self.quadruplet and not self.mdsa:
            raise ConfigError("neighborhood features reach the output only through MDSA branches")

    @property
    def fusion_mode(self) -> str:
        if self.cnf:
            return "cnf"
        return "concat" if self.quadruplet else "center"

    def label(self) -> str:
        parts = ["baseline"] + [k for k in ("tf", "mdsa", "quadruplet", "cnf") if getattr(self, k)]
        return "+".join(parts)


# cumulative rows of the ablation table
ABLATION_ROWS = (
    Components(tf=False, mdsa=False, quadruplet=False, cnf=False),
    Components(tf=True, mdsa=False, quadruplet=False, cnf=False),
    Components(tf=True, mdsa=True, quadruplet=False, cnf=False),
    Components(tf=True, mdsa=True, quadruplet=True, cnf=False),
    Components(tf=True, mdsa=True, quadruplet=True, cnf=True),
)


@dataclass(frozen=True)
class NetworkConfig:
    patch_size: int = 256
    strides: tuple[int, ...] = (2, 4, 8, 16)
    channels: tuple[int, ...] = (16, 24, 40, 112)
    backbone: str = "mobilenetv3_large"
    expansion: float = 4.0
    blocks_per_stage: int = 1
    use_se: bool = True
    fusion_expansion: float = 2.0
    msa_hidden: int = 16
    components: Components = field(default_factory=Components)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if isinstance(self.components, dict):
            object.__setattr__(self, "components", Components(**self.components))
        if len(self.strides) != len(self.channels) or len(self.strides) < 1:
            raise ConfigError("strides and channels must have the same non-zero length")
        if self.strides[0] != 2 or any(b != 2 * a for a, b in zip(self.strides, self.strides[1:])):
            raise ConfigError(f"strides must be 2, 4, 8, ... doubling per scale, got {self.strides}")
        if self.patch_size % self.strides[-1]:
            raise ConfigError(f"patch size {self.patch_size} not divisible by stride {self.strides[-1]}")
        if min(self.channels) < 1 or self.msa_hidden < 1 or self.blocks_per_stage < 1:
            raise ConfigError("widths and depths must be positive")

    @classmethod
    def tiny(cls, patch_size: int = 16, n_scales: int = 2, width: int = 4, **kw) -> "NetworkConfig":
        """A compact config for tests and gradient checks."""
        strides = tuple(2 ** (i + 1) for i in range(n_scales))
        channels = tuple(width * (i + 1) for i in range(n_scales))
        kw.setdefault("expansion", 2.0)
        kw.setdefault("msa_hidden", 8)
        return cls(patch_size=patch_size, strides=strides, channels=channels,
                   backbone="compact", **kw)

    def with_components(self, components: Components) -> "NetworkConfig":
        return replace(self, components=components)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = list(self.strides)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ForwardOutputs:
    logits: torch.Tensor
    main: torch.Tensor
    branches: list[torch.Tensor]
    attentions: list[torch.Tensor]
    tf_center: list[TFOutput]
    tf_neigh: list[TFOutput]
    cnf: list[CNFOutput]


class INSINet(nn.Module):
    """Change-detection network taking centre and neighborhood images of two dates.

    Inputs are float tensors ``(B, 3, s, s)`` in [0, 1].  With the MDSA
    components disabled the final logits are the main decoder output.
    """

    def __init__(self, config: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.config = config
        comp = config.components
        n = len(config.channels)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.encoder_center = build_encoder(config)
            self.encoder_neigh = build_encoder(config) if comp.quadruplet else None
            if comp.tf:
                self.tf_center = nn.ModuleList(TemporalFusion(c, config.fusion_expansion) for c in config.channels)
                self.tf_neigh = (nn.ModuleList(TemporalFusion(c, config.fusion_expansion) for c in config.channels)
                                 if comp.quadruplet else None)
            else:
                self.tf_center = self.tf_neigh = None
            if comp.mdsa:
                self.cnf = nn.ModuleList(ScaleFusion(c, comp.fusion_mode, config.fusion_expansion)
                                         for c in config.channels)
                self.mdsa = nn.ModuleList(BranchHead(c) for c in config.channels)
                self.msa = MultiScaleAggregation(n, config.msa_hidden)
            else:
                self.cnf = self.mdsa = self.msa = None
            self.decoder = Decoder(config.channels, config.fusion_expansion)

    @property
    def components(self) -> Components:
        return self.config.components

    def _check_input(self, *images: torch.Tensor) -> None:
        s = self.config.patch_size
        for img in images:
            if img.dim() != 4 or img.shape[1] != 3 or tuple(img.shape[-2:]) != (s, s):
                raise ShapeError(f"expected (B, 3, {s}, {s}) input, got {tuple(img.shape)}")

    def _pair(self, encoder: nn.Module, tfs: nn.ModuleList | None,
              x1: torch.Tensor, x2: torch.Tensor) -> list[TFOutput]:
        batch = x1.shape[0]
        pyramid = encoder(torch.cat([x1, x2], dim=0) * 2.0 - 1.0)
        outs = []
        for i, feat in enumerate(pyramid):
            f1, f2 = feat[:batch], feat[batch:]
            outs.append(tfs[i](f1, f2) if tfs is not None else difference_fusion(f1, f2))
        return outs

    def quadruple_forward(self, center_t1, center_t2, neigh_t1=None, neigh_t2=None):
        """Encoder passes plus TF on every scale, then per-scale fusion."""
        self._check_input(center_t1, center_t2)
        tf_center = self._pair(self.encoder_center, self.tf_center, center_t1, center_t2)
        tf_neigh: list[TFOutput] = []
        if self.components.quadruplet:
            if neigh_t1 is None or neigh_t2 is None:
                raise ShapeError("this configuration needs neighborhood images")
            self._check_input(neigh_t1, neigh_t2)
            tf_neigh = self._pair(self.encoder_neigh, self.tf_neigh, neigh_t1, neigh_t2)
        cnf: list[CNFOutput] = []
        if self.cnf is not None:
            for i, module in enumerate(self.cnf):
                cnf.append(module(tf_center[i], tf_neigh[i] if tf_neigh else None))
        return tf_center, tf_neigh, cnf

    def forward_full(self, center_t1, center_t2, neigh_t1=None, neigh_t2=None) -> ForwardOutputs:
        tf_center, tf_neigh, cnf = self.quadruple_forward(center_t1, center_t2, neigh_t1, neigh_t2)
        skips = [t.fused for t in tf_center]
        branches: list[torch.Tensor] = []
        attentions: list[torch.Tensor] = []
        if self.mdsa is not None:
            for i, (head, c) in enumerate(zip(self.mdsa, cnf)):
                logits = head(c)
                a = mdsa_attention(c.attention, logits)
                branches.append(logits)
                attentions.append(a)
                skips[i] = reinforce(skips[i], a)
        main = self.decoder(skips, center_t1.shape[-2:])
        final = self.msa(main, branches) if self.msa is not None else main
        return ForwardOutputs(final, main, branches, attentions, tf_center, tf_neigh, cnf)

    def forward(self, center_t1, center_t2, neigh_t1=None, neigh_t2=None) -> torch.Tensor:
        return self.forward_full(center_t1, center_t2, neigh_t1, neigh_t2).logits


def parameter_groups(model: INSINet) -> dict[str, list[tuple[str, nn.Parameter]]]:
    """Named parameter groups: encoders, per-scale TF/CNF/MDSA, decoder, MSA."""
    groups: dict[str, list[tuple[str, nn.Parameter]]] = {}
    for name, p in model.named_parameters():
        head, _, rest = name.partition(".")
        if head in ("tf_center", "tf_neigh", "cnf", "mdsa"):
            idx = rest.partition(".")[0]
            key = f"{head}.{idx}"
            if head.startswith("tf") and ".feedback." in name:
                key += ".feedback"
        else:
            key = head
        groups.setdefault(key, []).append((name, p))
    return groups


def images_to_tensors(X: np.ndarray, dtype=torch.float32) -> list[torch.Tensor]:
    """``(n, 4, s, s, 3)`` numpy stack to four ``(n, 3, s, s)`` tensors."""
    X = np.asarray(X)
    if X.ndim != 5 or X.shape[1] != 4 or X.shape[-1] != 3:
        raise ShapeError(f"expected (n, 4, s, s, 3) images, got {X.shape}")
    t = torch.as_tensor(np.ascontiguousarray(X.transpose(1, 0, 4, 2, 3)), dtype=dtype)
    return [t[i] for i in range(4)]


def model_inputs(model: INSINet, tensors: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Drop neighborhood images for configurations that do not use them."""
    return list(tensors) if model.components.quadruplet else list(tensors[:2])

"""Parameter and multiply-accumulate counting.

Counting convention
-------------------
* convolution: ``k_h * k_w * (C_in / groups) * C_out * H_out * W_out``
  (bias adds are not counted);
* matrix products: ``M * N * K``;
* reductions (pooling, means): one MAC per input element;
* any other arithmetic op (elementwise, normalisation, activations,
  interpolation, grid sampling, softmax): one MAC per output element;
* pure data movement (views, concatenation, slicing, copies) is free.

Ops are intercepted at the ATen dispatcher level so functional calls made
inside ``forward`` are counted as well as module calls.  Each op is charged
to the innermost module executing when it runs.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import torch
from torch import nn
from torch.utils._python_dispatch import TorchDispatchMode

FREE_OPS = {
    "view", "_unsafe_view", "reshape", "t", "transpose", "permute", "expand", "slice",
    "select", "cat", "stack", "clone", "copy_", "copy", "detach", "alias", "unsqueeze",
    "squeeze", "split", "split_with_sizes", "empty", "empty_like", "zeros", "zeros_like",
    "ones", "ones_like", "full", "arange", "lift_fresh", "lift_fresh_copy", "_to_copy",
    "contiguous", "as_strided", "unbind", "fill_", "zero_", "new_empty", "new_zeros",
    "empty_strided", "_reshape_alias", "flatten", "unflatten", "meshgrid", "scalar_tensor",
    "_local_scalar_dense", "resize_", "set_", "index_select", "narrow", "item",
}
CONV_OPS = {"convolution", "conv2d", "_convolution", "cudnn_convolution", "mkldnn_convolution"}
MATMUL_OPS = {"mm", "addmm", "bmm", "matmul", "linear"}
REDUCE_OPS = {"mean", "sum", "_adaptive_avg_pool2d", "adaptive_avg_pool2d", "avg_pool2d", "amax"}


@dataclass
class EfficiencyReport:
    params: int = 0
    macs: int = 0
    input_size: int | None = None
    per_layer_params: dict[str, int] = field(default_factory=dict)
    per_layer_macs: dict[str, int] = field(default_factory=dict)

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def macs_g(self) -> float:
        return self.macs / 1e9

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "params_M": round(self.params_m, 4),
            "macs": self.macs,
            "macs_G": round(self.macs_g, 4),
            "input_size": self.input_size,
            "per_layer_params": dict(self.per_layer_params),
            "per_layer_macs": dict(self.per_layer_macs),
        }


def count_params(model: nn.Module) -> EfficiencyReport:
    """Learnable scalars, each shared tensor counted once, broken down by module."""
    per_layer: dict[str, int] = defaultdict(int)
    seen: set[int] = set()
    for mod_name, module in model.named_modules(remove_duplicate=True):
        for p_name, p in module.named_parameters(recurse=False):
            if id(p) in seen or not p.requires_grad:
                continue
            seen.add(id(p))
            per_layer[mod_name or "<root>"] += p.numel()
    return EfficiencyReport(params=sum(per_layer.values()), per_layer_params=dict(per_layer))


def _numel(out) -> int:
    if isinstance(out, torch.Tensor):
        return out.numel()
    if isinstance(out, (tuple, list)) and out and isinstance(out[0], torch.Tensor):
        return out[0].numel()
    return 0


def op_macs(func, args, out) -> int:
    name = func.overloadpacket.__name__
    base = name.rstrip("_")
    if name in FREE_OPS or base in FREE_OPS:
        return 0
    if name in CONV_OPS:
        weight = args[1]
        c_in_per_group, k_h, k_w = weight.shape[1], weight.shape[2], weight.shape[3]
        return _numel(out) * c_in_per_group * k_h * k_w
    if name in MATMUL_OPS:
        a = args[1] if name == "addmm" else args[0]
        return _numel(out) * a.shape[-1]
    if name in REDUCE_OPS:
        return args[0].numel()
    if not isinstance(out, (torch.Tensor, tuple, list)):
        return 0
    if isinstance(out, torch.Tensor) and not out.is_floating_point():
        return 0
    return _numel(out)


class _MacCounter(TorchDispatchMode):
    def __init__(self, scope: list[str]):
        super().__init__()
        self.scope = scope
        self.per_layer: dict[str, int] = defaultdict(int)

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        macs = op_macs(func, args, out)
        if macs:
            self.per_layer[self.scope[-1]] += macs
        return out


def count_macs(model: nn.Module, inputs, input_size: int | None = None) -> EfficiencyReport:
    """MACs of one inference forward pass on ``inputs`` (a tensor or tuple of tensors)."""
    if isinstance(inputs, torch.Tensor):
        inputs = (inputs,)
    scope = ["<functional>"]
    handles = []

    def enter(label):
        def hook(module, args):
            scope.append(label)
        return hook

    def leave(module, args, output):
        scope.pop()

    for name, module in model.named_modules():
        handles.append(module.register_forward_pre_hook(enter(name or "<root>")))
        handles.append(module.register_forward_hook(leave))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad(), _MacCounter(scope) as counter:
            model(*inputs)
    finally:
        for h in handles:
            h.remove()
        model.train(was_training)
    per_layer = dict(counter.per_layer)
    return EfficiencyReport(macs=sum(per_layer.values()), input_size=input_size, per_layer_macs=per_layer)


def profile_model(model, input_size: int | None = None, batch: int = 1) -> EfficiencyReport:
    """Params plus MACs of an INSINet-style model on random inputs of side ``input_size``."""
    size = input_size or model.config.patch_size
    n_inputs = 4 if model.components.quadruplet else 2
    gen = torch.Generator().manual_seed(0)
    inputs = tuple(torch.rand(batch, 3, size, size, generator=gen) for _ in range(n_inputs))
    if size != model.config.patch_size:
        from dataclasses import replace

        model = type(model)(replace(model.config, patch_size=size))
    report = count_macs(model, inputs, input_size=size)
    params = count_params(model)
    report.params = params.params
    report.per_layer_params = params.per_layer_params
    return report


def conv_macs(k: int, c_in: int, c_out: int, h_out: int, w_out: int, groups: int = 1) -> int:
    """Closed form used by the tests: ``k^2 * (C_in / groups) * C_out * H_out * W_out``."""
    return k * k * (c_in // groups) * c_out * h_out * w_out


def conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return math.floor((size + 2 * pad - k) / stride) + 1

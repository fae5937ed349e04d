import torch
from torch import nn

from insinet.gradcheck import CoordinateCheck, GradCheckReport, check_gradients, gradient_check
from insinet.nn.model import ABLATION_ROWS, NetworkConfig
from insinet.exceptions import GradientCheckError

import pytest


def test_linear_toy():
    torch.manual_seed(0)
    conv = nn.Conv2d(3, 2, 1).double()
    x = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    target = torch.randn(2, 2, 4, 4, dtype=torch.float64)

    def loss():
        return (conv(x) * target).sum()

    rep = check_gradients(loss, {"conv": list(conv.named_parameters())}, min_total=8)
    assert rep.max_rel_error <= 1e-8 and len(rep.checks) >= 8


def test_full_tiny_network():
    rep = gradient_check(seed=0)
    assert rep.passed and rep.max_rel_error <= 1e-4
    assert len(rep.checks) >= 50
    groups = set(rep.per_group)
    for needed in ("encoder_center", "encoder_neigh", "tf_center.0.feedback", "tf_neigh.1.feedback",
                   "cnf.0", "cnf.1", "mdsa.0", "mdsa.1", "decoder", "msa"):
        assert needed in groups


@pytest.mark.parametrize("comp", ABLATION_ROWS, ids=lambda c: c.label())
def test_every_ablation_row(comp):
    cfg = NetworkConfig.tiny(patch_size=16, n_scales=2, width=4, components=comp)
    # rows without attention feed |f1 - f2| straight to the decoder; a smaller
    # step keeps central differences from straddling its kink
    step = 1e-5 if comp.mdsa else 1e-6
    assert gradient_check(cfg, min_total=20, step=step).passed


def test_zero_gradient_rule():
    ok = CoordinateCheck("g", "w", (0,), 0.0, 1e-12)
    bad = CoordinateCheck("g", "w", (1,), 0.0, 1e-6)
    rep = GradCheckReport([ok])
    assert rep.passed and rep.zero_flagged == [ok]
    rep = GradCheckReport([ok, bad])
    assert not rep.passed and rep.failing_groups == ["g"]


def test_wrong_gradient_detected():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x ** 2

        @staticmethod
        def backward(ctx, grad):
            (x,) = ctx.saved_tensors
            return grad * 3 * x  # should be 2x

    w = nn.Parameter(torch.randn(5, dtype=torch.float64))
    rep = check_gradients(lambda: Wrong.apply(w).sum(), {"w": [("w", w)]}, min_total=5)
    assert not rep.passed and rep.failing_groups == ["w"]


def test_raise_on_failure():
    with pytest.raises(GradientCheckError):
        gradient_check(min_total=10, tolerance=0.0, raise_on_failure=True)

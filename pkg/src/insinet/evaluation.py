"""Evaluation protocols: plain test sets, ring bands, scale factors,
misregistration, target size, and the component ablation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .benchmarks import SIZE_CLASSES, BenchmarkSuite, verify_region_content
from .data import BiTemporalSample
from .exceptions import ContractError, INSINetError
from .geometry import BAND_NAMES
from .metrics import ConfusionCounts, MetricReport, confusion, metrics
from .nn.model import ABLATION_ROWS, Components, INSINet, NetworkConfig, images_to_tensors, model_inputs
from .profiling import profile_model
from .training import Checkpoint, TrainConfig, cross_entropy_loss, predict_proba_arrays, train

log = logging.getLogger(__name__)

Predictor = Callable[[Sequence[BiTemporalSample]], np.ndarray]

# F1 (%) of the five cumulative rows as originally reported, kept for side-by-side tables
REFERENCE_ABLATION_F1 = (75.45, 76.82, 80.14, 82.15, 83.22)
REFERENCE_ABLATION_PARAMS_M = (0.27, 0.36, 0.50, 0.90, 0.83)
REFERENCE_ABLATION_MACS_G = (0.48, 0.62, 0.75, 1.31, 1.32)


def as_predictor(model) -> Predictor:
    """Wrap a checkpoint or network as ``samples -> binary maps``; callables pass through."""
    if isinstance(model, Checkpoint):
        model = model.build_model()
    if isinstance(model, INSINet):
        net = model

        def predict(samples: Sequence[BiTemporalSample]) -> np.ndarray:
            if not samples:
                return np.zeros((0, net.config.patch_size, net.config.patch_size), dtype=np.uint8)
            X = np.stack([s.images() for s in samples]).astype(np.float32)
            probs = predict_proba_arrays(net, X)
            return (probs[..., 1] > probs[..., 0]).astype(np.uint8)

        return predict
    if callable(model):
        return model
    raise TypeError(f"cannot predict with {type(model).__name__}")


def evaluate_set(predictor, samples: Iterable[BiTemporalSample],
                 use_region_mask: bool = False) -> tuple[ConfusionCounts, MetricReport]:
    """Micro-averaged counts over a set, optionally restricted to region masks."""
    predictor = as_predictor(predictor)
    samples = list(samples)
    counts = ConfusionCounts()
    if samples:
        preds = predictor(samples)
        for pred, s in zip(preds, samples):
            mask = s.region_mask if use_region_mask else None
            if use_region_mask and mask is None:
                raise ContractError(f"sample {s.meta.get('sample_id')} has no region mask")
            counts = counts + confusion(pred, s.label, mask)
    return counts, metrics(counts)


@dataclass
class GroupScores:
    """Scores per x-axis position (ring bands, scale factors, ...)."""

    kind: str
    metric: str
    scores: dict[str, float]
    per_set: dict[str, float] = field(default_factory=dict)
    degenerate: list[str] = field(default_factory=list)
    counts: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GroupScores":
        return cls(**d)


def _need_sets(suite: BenchmarkSuite, expected: dict[str, int]) -> None:
    for group, n in expected.items():
        got = len(suite.groups.get(group, {}))
        if got != n:
            raise ContractError(f"group {group!r} has {got} sets, expected {n}")


def ring_evaluate(predictor, suite: BenchmarkSuite, metric: str = "f1") -> GroupScores:
    """Masked score of each of the 16 sets, averaged over the 4 corners of each band."""
    source = suite.params.get("source_kind", suite.kind)
    if source != "neighborhood_ring":
        raise ContractError(f"ring evaluation needs a neighborhood_ring suite, got {suite.kind}")
    _need_sets(suite, {b: 4 for b in BAND_NAMES})
    if suite.kind == "neighborhood_ring":
        verify_region_content(suite)
    predictor = as_predictor(predictor)
    out = GroupScores("ring", metric, {})
    for band in BAND_NAMES:
        values = []
        for name, data in suite.groups[band].items():
            counts, rep = evaluate_set(predictor, data, use_region_mask=True)
            value = rep.get(metric)
            out.per_set[name] = value
            out.counts[name] = counts.to_dict()
            if metric.upper() in {d.upper() for d in rep.degenerate}:
                out.degenerate.append(name)
            values.append(value)
        out.scores[band] = float(np.mean(values))
    return out


def scale_evaluate(predictor, suite: BenchmarkSuite, metric: str = "f1") -> GroupScores:
    """Overall score per degradation factor, ordered by factor."""
    if suite.kind != "scale":
        raise ContractError(f"scale evaluation needs a scale suite, got {suite.kind}")
    factors = [str(f) for f in suite.params.get("factors", [1, 2, 4, 8, 16])]
    sets = suite.groups.get("scale", {})
    missing = [f for f in factors if f not in sets]
    if missing or len(factors) != 5:
        raise ContractError(f"scale suite must hold 5 factor sets; missing {missing}")
    predictor = as_predictor(predictor)
    out = GroupScores("scale", metric, {})
    for f in factors:
        counts, rep = evaluate_set(predictor, sets[f])
        out.scores[f] = rep.get(metric)
        out.counts[f] = counts.to_dict()
        if metric.upper() in {d.upper() for d in rep.degenerate}:
            out.degenerate.append(f)
    return out


def misregistration_evaluate(predictor, registered: BenchmarkSuite,
                             unregistered: BenchmarkSuite, metric: str = "f1") -> dict:
    """Ring scores for both suites and the unregistered-minus-registered deltas."""
    predictor = as_predictor(predictor)
    reg = ring_evaluate(predictor, registered, metric)
    unreg = ring_evaluate(predictor, unregistered, metric)
    return {
        "kind": "misregistration",
        "metric": metric,
        "shift": unregistered.params.get("shift"),
        "registered": reg.scores,
        "unregistered": unreg.scores,
        "delta": {b: unreg.scores[b] - reg.scores[b] for b in BAND_NAMES},
    }


def target_size_evaluate(predictor, suite: BenchmarkSuite, metric: str = "f1") -> dict:
    """Score per size class and degradation factor."""
    if suite.kind != "target_size":
        raise ContractError(f"target-size evaluation needs a target_size suite, got {suite.kind}")
    predictor = as_predictor(predictor)
    out = {"kind": "target_size", "metric": metric,
           "thresholds": suite.params.get("thresholds"), "scores": {}, "sizes": {}}
    for cls in SIZE_CLASSES:
        sets = suite.groups.get(cls, {})
        out["scores"][cls] = {}
        for factor, data in sets.items():
            data = list(data)
            out["sizes"][cls] = len(data)
            out["scores"][cls][factor] = evaluate_set(predictor, data)[1].get(metric)
    return out


# -- ablation ------------------------------------------------------------------------

def check_weight_sharing(model: INSINet, patch_size: int | None = None) -> bool:
    """True when each encoder pair is one parameter store used for both dates.

    Identical images fed to the two slots of a pair must give bit-identical
    features in inference mode, and the centre and neighborhood pairs must not
    share storage.
    """
    s = patch_size or model.config.patch_size
    x = torch.rand(1, 3, s, s, generator=torch.Generator().manual_seed(0))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            pairs = [model.encoder_center] + ([model.encoder_neigh] if model.encoder_neigh is not None else [])
            for enc in pairs:
                feats = enc(torch.cat([x, x]) * 2.0 - 1.0)
                if not all(torch.equal(f[:1], f[1:]) for f in feats):
                    return False
            if model.encoder_neigh is not None:
                center_ids = {id(p) for p in model.encoder_center.parameters()}
                if any(id(p) in center_ids for p in model.encoder_neigh.parameters()):
                    return False
    finally:
        model.train(was_training)
    return True


@torch.no_grad()
def dataset_loss(model: INSINet, samples: Sequence[BiTemporalSample], batch_size: int = 8) -> float:
    """Inference-mode cross-entropy averaged over every pixel of ``samples``."""
    was_training = model.training
    model.eval()
    total, n = 0.0, 0
    try:
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            X = np.stack([s.images() for s in chunk]).astype(np.float32)
            y = torch.from_numpy(np.stack([s.label for s in chunk]).astype(np.int64))
            logits = model(*model_inputs(model, images_to_tensors(X)))
            total += cross_entropy_loss(logits, y).item() * len(chunk)
            n += len(chunk)
    finally:
        model.train(was_training)
    return total / max(n, 1)


@dataclass
class AblationRow:
    components: dict
    label: str
    f1: float | None = None
    params: int | None = None
    macs: int | None = None
    initial_loss: float | None = None
    final_loss: float | None = None
    sharing_ok: bool | None = None
    status: str = "ok"
    error: str | None = None

    @property
    def loss_decreased(self) -> bool:
        return (self.initial_loss is not None and self.final_loss is not None
                and self.final_loss < self.initial_loss)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params_M"] = None if self.params is None else self.params / 1e6
        d["macs_G"] = None if self.macs is None else self.macs / 1e9
        d["loss_decreased"] = self.loss_decreased
        return d


def run_ablation(base_config: NetworkConfig, train_data: Iterable[BiTemporalSample],
                 test_data: Iterable[BiTemporalSample] | None = None,
                 train_config: TrainConfig = TrainConfig(),
                 rows: Sequence[Components] = ABLATION_ROWS,
                 profile_size: int | None = None) -> list[AblationRow]:
    """Train and score each cumulative component configuration.

    F1 is measured on ``test_data`` (the training set when omitted).  A row
    that fails is recorded with ``status="failed"`` and the run continues.
    """
    train_samples = list(train_data)
    test_samples = list(test_data) if test_data is not None else train_samples
    out = []
    for comp in rows:
        row = AblationRow(components=asdict(comp), label=comp.label())
        try:
            config = base_config.with_components(comp)
            initial = INSINet(config)
            row.initial_loss = dataset_loss(initial, train_samples)
            checkpoint, _ = train(config, train_samples, None, train_config)
            model = checkpoint.build_model()
            row.final_loss = dataset_loss(model, train_samples)
            row.f1 = evaluate_set(model, test_samples)[1].f1
            row.sharing_ok = check_weight_sharing(model)
            prof = profile_model(model, profile_size)
            row.params, row.macs = prof.params, prof.macs
        except (INSINetError, RuntimeError, ValueError) as exc:
            log.exception("ablation row %s failed", comp.label())
            row.status, row.error = "failed", str(exc)
        out.append(row)
    return out


def ablation_table(rows: Sequence[AblationRow]) -> str:
    """Plain-text table with the component tick columns and F1 / Params / MACs."""
    head = f"{'Baseline':>8} {'TF':>3} {'MDSA':>4} {'Quad':>4} {'CNF':>3} | {'F1 (%)':>7} {'Params (M)':>10} {'MACs (G)':>9} | status"
    lines = [head, "-" * len(head)]
    for r in rows:
        c = r.components
        tick = lambda on: "x" if on else ""
        f1 = "-" if r.f1 is None else f"{100 * r.f1:.2f}"
        params = "-" if r.params is None else f"{r.params / 1e6:.4f}"
        macs = "-" if r.macs is None else f"{r.macs / 1e9:.4f}"
        lines.append(f"{'x':>8} {tick(c['tf']):>3} {tick(c['mdsa']):>4} {tick(c['quadruplet']):>4} "
                     f"{tick(c['cnf']):>3} | {f1:>7} {params:>10} {macs:>9} | {r.status}")
    return "\n".join(lines)


def reference_gains() -> dict[str, float]:
    """F1 gains implied by the reference ablation rows (percentage points)."""
    f1 = REFERENCE_ABLATION_F1
    scale = round(f1[2] - f1[1], 2)
    neighborhood = round(f1[4] - f1[2], 2)
    return {"scale": scale, "neighborhood": neighborhood, "total": round(scale + neighborhood, 2)}

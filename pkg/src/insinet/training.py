"""Pixel-averaged cross-entropy, the Adam training loop, checkpoints and inference."""

from __future__ import annotations

import contextlib
import copy
import io as _io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from . import io
from .data import AugmentationSpec, BiTemporalSample, augment
from .exceptions import ConfigError, ContractError, DivergenceError, InvalidInputError
from .geometry import build_tile_grid, stitch as stitch_maps
from .metrics import ConfusionCounts, MetricReport, confusion, metrics
from .nn.model import INSINet, NetworkConfig, images_to_tensors, model_inputs, parameter_groups

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "insinet-checkpoint"
CHECKPOINT_VERSION = 1


def cross_entropy_loss(logits: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Mean over pixels (and samples) of ``-log softmax(logits)[label]``.

    ``logits`` is ``(B, 2, H, W)`` or ``(2, H, W)``; ``label`` matches without
    the class axis and holds only 0 and 1.
    """
    label = torch.as_tensor(label)
    if logits.dim() == 3:
        logits, label = logits.unsqueeze(0), label.unsqueeze(0)
    if logits.shape[1] != 2 or logits.shape[-2:] != label.shape[-2:] or logits.shape[0] != label.shape[0]:
        raise InvalidInputError(f"logits {tuple(logits.shape)} do not match label {tuple(label.shape)}")
    if not bool(((label == 0) | (label == 1)).all()):
        raise InvalidInputError("label values must be 0 or 1")
    log_p = F.log_softmax(logits, dim=1)
    picked = log_p.gather(1, label.long().unsqueeze(1)).squeeze(1)
    return -picked.mean()


@dataclass
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-3
    epochs: int = 200
    seed: int = 0
    deterministic: bool = True
    max_steps: int | None = None
    lr_decay: float | None = None
    augment: bool = False
    color_jitter: float = 0.1
    eval_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.epochs < 1:
            raise ConfigError("batch_size, learning_rate and epochs must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive")
        if self.lr_decay is not None and not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay is a per-epoch multiplier in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Checkpoint:
    state_dict: dict
    network_config: NetworkConfig
    train_config: TrainConfig
    epoch: int = 0
    best_val_f1: float | None = None
    loss_trace: list[float] = field(default_factory=list)

    def build_model(self) -> INSINet:
        model = INSINet(self.network_config)
        model.load_state_dict(self.state_dict)
        return model.eval()

    def save(self, path: str | Path) -> Path:
        """Atomically write the checkpoint archive."""
        path = Path(path)
        model_groups = {}
        for group, params in parameter_groups(self.build_model()).items():
            model_groups[group] = [[name, list(p.shape), str(p.dtype)] for name, p in params]
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "network_config": self.network_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "seed": self.network_config.seed,
            "epoch": self.epoch,
            "best_val_f1": self.best_val_f1,
            "loss_trace": list(self.loss_trace),
            "groups": model_groups,
            "state_dict": self.state_dict,
        }
        buf = _io.BytesIO()
        torch.save(payload, buf)
        with io.atomic_write(path) as fh:
            fh.write(buf.getvalue())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"{path} is not an insinet checkpoint")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {payload.get('version')}")
        return cls(
            state_dict=payload["state_dict"],
            network_config=NetworkConfig.from_dict(payload["network_config"]),
            train_config=TrainConfig.from_dict(payload["train_config"]),
            epoch=payload["epoch"],
            best_val_f1=payload["best_val_f1"],
            loss_trace=list(payload["loss_trace"]),
        )


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    val: list[dict] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    status: str = "converged"

    def to_dict(self) -> dict:
        return asdict(self)


@contextlib.contextmanager
def deterministic_mode(enabled: bool = True):
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(enabled)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)


def _as_samples(data) -> list[BiTemporalSample]:
    return [] if data is None else list(data)


def _stack(samples: Sequence[BiTemporalSample]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([s.images() for s in samples]).astype(np.float32),
            np.stack([s.label for s in samples]).astype(np.int64))


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled mini-batches; a final batch smaller than 2 is dropped."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches.pop()
    return batches


@torch.no_grad()
def predict_proba_arrays(model: INSINet, X: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Inference-mode class probabilities ``(n, s, s, 2)`` for stacked images."""
    was_training = model.training
    model.eval()
    out = []
    try:
        for i in range(0, len(X), batch_size):
            tensors = images_to_tensors(X[i:i + batch_size])
            logits = model(*model_inputs(model, tensors))
            out.append(torch.softmax(logits, dim=1).permute(0, 2, 3, 1).double().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0,) + X.shape[2:4] + (2,))


def evaluate_arrays(model: INSINet, X: np.ndarray, y: np.ndarray,
                    masks: np.ndarray | None = None) -> tuple[ConfusionCounts, MetricReport]:
    """Micro-averaged counts and metrics over a stacked set."""
    probs = predict_proba_arrays(model, X)
    pred = probs[..., 1] > probs[..., 0]
    counts = ConfusionCounts()
    for i in range(len(pred)):
        counts = counts + confusion(pred[i], y[i], None if masks is None else masks[i])
    return counts, metrics(counts)


def train(network_config: NetworkConfig, train_data: Iterable[BiTemporalSample],
          val_data: Iterable[BiTemporalSample] | None = None,
          train_config: TrainConfig = TrainConfig(),
          log_path: str | Path | None = None,
          checkpoint_path: str | Path | None = None,
          model: INSINet | None = None) -> tuple[Checkpoint, TrainReport]:
    """Mini-batch Adam on the pixel-averaged cross-entropy.

    Returns the checkpoint with the best validation F1 (the last epoch when
    no validation data is given) and the per-epoch report.  A non-finite
    loss raises :class:`DivergenceError`.
    """
    samples = _as_samples(train_data)
    if not samples:
        raise InvalidInputError("empty training set")
    val = _as_samples(val_data)
    cfg = train_config
    if samples[0].size != network_config.patch_size:
        raise ContractError(f"samples are {samples[0].size}px, network expects {network_config.patch_size}px")
    X, y = _stack(samples)
    Xv, yv = _stack(val) if val else (None, None)
    aug_spec = AugmentationSpec(color_jitter=cfg.color_jitter) if cfg.augment else None

    with deterministic_mode(cfg.deterministic):
        torch.manual_seed(cfg.seed)
        model = model if model is not None else INSINet(network_config)
        model.train()
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        scheduler = (torch.optim.lr_scheduler.ExponentialLR(optimizer, cfg.lr_decay)
                     if cfg.lr_decay else None)
        report = TrainReport()
        best = None
        best_f1 = -math.inf
        step = 0
        t0 = time.perf_counter()
        for epoch in range(cfg.epochs):
            losses = []
            for b, idx in enumerate(batch_order(len(X), cfg.batch_size, cfg.seed, epoch)):
                if aug_spec is not None:
                    batch = [augment(samples[i], aug_spec, np.random.default_rng([cfg.seed, epoch, int(i)]))
                             for i in idx]
                    xb, yb = _stack(batch)
                else:
                    xb, yb = X[idx], y[idx]
                tensors = images_to_tensors(xb)
                logits = model(*model_inputs(model, tensors))
                loss = cross_entropy_loss(logits, torch.from_numpy(yb))
                if not torch.isfinite(loss):
                    report.status = "aborted-divergence"
                    raise DivergenceError(f"non-finite loss {loss.item()} at epoch {epoch} step {step}")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                value = float(loss.item())
                losses.append(value)
                report.step_loss.append(value)
                step += 1
                if log_path is not None:
                    io.append_jsonl(log_path, {"epoch": epoch, "step": step, "loss": value,
                                               "lr": optimizer.param_groups[0]["lr"]})
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
            if scheduler is not None:
                scheduler.step()
            report.epoch_loss.append(float(np.mean(losses)))
            report.wall_clock.append(time.perf_counter() - t0)
            last_epoch = epoch == cfg.epochs - 1 or (cfg.max_steps is not None and step >= cfg.max_steps)
            if val and ((epoch + 1) % cfg.eval_every == 0 or last_epoch):
                counts, rep = evaluate_arrays(model, Xv, yv)
                record = {"epoch": epoch, "step": step, **rep.to_dict(), **counts.to_dict()}
                report.val.append(record)
                if log_path is not None:
                    io.append_jsonl(log_path, {"epoch": epoch, "step": step, "val": rep.to_dict()})
                if rep.f1 > best_f1:
                    best_f1 = rep.f1
                    best = (epoch, copy.deepcopy(model.state_dict()))
            log.info("epoch %d loss %.5f", epoch, report.epoch_loss[-1])
            if last_epoch:
                break
        if best is None:
            best = (len(report.epoch_loss) - 1, copy.deepcopy(model.state_dict()))
            best_f1 = None
        checkpoint = Checkpoint(
            state_dict=best[1],
            network_config=network_config,
            train_config=cfg,
            epoch=best[0],
            best_val_f1=best_f1,
            loss_trace=list(report.step_loss),
        )
    if checkpoint_path is not None:
        checkpoint.save(checkpoint_path)
    return checkpoint, report


def predict(checkpoint: Checkpoint | INSINet, data: Iterable[BiTemporalSample],
            stitch: bool = False) -> dict:
    """Per-sample binary maps and probabilities, optionally stitched per scene.

    Stitching needs ``scene_id``, ``origin``, ``scene_height`` and
    ``scene_width`` in each sample's metadata.
    """
    model = checkpoint.build_model() if isinstance(checkpoint, Checkpoint) else checkpoint
    samples = _as_samples(data)
    if samples and samples[0].size != model.config.patch_size:
        raise ContractError(f"samples are {samples[0].size}px, checkpoint expects {model.config.patch_size}px")
    if not samples:
        return {"probabilities": [], "predictions": [], "scenes": {}}
    X, _ = _stack(samples)
    probs = predict_proba_arrays(model, X)
    preds = (probs[..., 1] > probs[..., 0]).astype(np.uint8)
    out = {"probabilities": list(probs), "predictions": list(preds), "scenes": {}}
    if stitch:
        by_scene: dict[str, list[int]] = {}
        for i, s in enumerate(samples):
            by_scene.setdefault(s.meta.get("scene_id", "scene"), []).append(i)
        for scene_id, idx in by_scene.items():
            meta = samples[idx[0]].meta
            try:
                h, w = int(meta["scene_height"]), int(meta["scene_width"])
                stride = int(meta.get("stride", model.config.patch_size))
            except KeyError as exc:
                raise ContractError(f"sample metadata lacks {exc} needed for stitching") from None
            grid = build_tile_grid(w, h, model.config.patch_size, stride)
            lookup = {tuple(samples[i].meta["origin"]): probs[i] for i in idx}
            maps = [lookup.get(tuple(o)) for o in grid.origins]
            out["scenes"][scene_id] = stitch_maps(grid, maps)
    return out

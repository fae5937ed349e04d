"""scikit-learn style front end.

``X`` is an ``(n, 4, s, s, 3)`` stack of (centre T1, centre T2, neighborhood
T1, neighborhood T2) images, ``y`` an ``(n, s, s)`` 0/1 change label stack.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .benchmarks import degrade
from .data import extract_samples
from .metrics import ConfusionCounts, confusion, metrics
from .nn.model import Components, NetworkConfig
from .training import Checkpoint, TrainConfig, predict_proba_arrays, train
from .validation import arrays_to_samples, check_bitemporal_X, check_labels


class INSINetChangeDetector(ClassifierMixin, BaseEstimator):
    """Per-pixel binary change classifier.

    Hyperparameters mirror :class:`NetworkConfig` and :class:`TrainConfig`;
    ``tf``, ``mdsa``, ``quadruplet`` and ``cnf`` switch network parts on or off.
    """

    def __init__(self, patch_size=256, strides=(2, 4, 8, 16), channels=(16, 24, 40, 112),
                 backbone="mobilenetv3_large", expansion=4.0, fusion_expansion=2.0,
                 msa_hidden=16, tf=True, mdsa=True, quadruplet=True, cnf=True,
                 batch_size=8, learning_rate=1e-3, epochs=200, max_steps=None,
                 augment=False, deterministic=True, random_state=0):
        self.patch_size = patch_size
        self.strides = strides
        self.channels = channels
        self.backbone = backbone
        self.expansion = expansion
        self.fusion_expansion = fusion_expansion
        self.msa_hidden = msa_hidden
        self.tf = tf
        self.mdsa = mdsa
        self.quadruplet = quadruplet
        self.cnf = cnf
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.max_steps = max_steps
        self.augment = augment
        self.deterministic = deterministic
        self.random_state = random_state

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            patch_size=self.patch_size, strides=tuple(self.strides), channels=tuple(self.channels),
            backbone=self.backbone, expansion=self.expansion, fusion_expansion=self.fusion_expansion,
            msa_hidden=self.msa_hidden,
            components=Components(self.tf, self.mdsa, self.quadruplet, self.cnf),
            seed=self.random_state,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                           epochs=self.epochs, max_steps=self.max_steps, augment=self.augment,
                           deterministic=self.deterministic, seed=self.random_state)

    def fit(self, X, y=None, X_val=None, y_val=None):
        X = check_bitemporal_X(X, self.patch_size)
        y = check_labels(y if y is not None else X, X) if y is not None else None
        if y is None:
            raise ValueError("fit needs labels y")
        val = None
        if X_val is not None:
            Xv = check_bitemporal_X(X_val, self.patch_size)
            val = arrays_to_samples(Xv, check_labels(y_val, Xv))
        self.checkpoint_, self.train_report_ = train(
            self.network_config(), arrays_to_samples(X, y), val, self.train_config())
        self.model_ = self.checkpoint_.build_model()
        self.classes_ = np.array([0, 1])
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint | str) -> "INSINetChangeDetector":
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = Checkpoint.load(checkpoint)
        nc, tc = checkpoint.network_config, checkpoint.train_config
        est = cls(patch_size=nc.patch_size, strides=nc.strides, channels=nc.channels,
                  backbone=nc.backbone, expansion=nc.expansion, fusion_expansion=nc.fusion_expansion,
                  msa_hidden=nc.msa_hidden, tf=nc.components.tf, mdsa=nc.components.mdsa,
                  quadruplet=nc.components.quadruplet, cnf=nc.components.cnf,
                  batch_size=tc.batch_size, learning_rate=tc.learning_rate, epochs=tc.epochs,
                  max_steps=tc.max_steps, augment=tc.augment, deterministic=tc.deterministic,
                  random_state=nc.seed)
        est.checkpoint_ = checkpoint
        est.model_ = checkpoint.build_model()
        est.classes_ = np.array([0, 1])
        return est

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities, shape ``(n, s, s, 2)``."""
        check_is_fitted(self, "model_")
        return predict_proba_arrays(self.model_, check_bitemporal_X(X, self.patch_size), self.batch_size)

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return (probs[..., 1] > probs[..., 0]).astype(np.uint8)

    def score(self, X, y, sample_weight=None) -> float:
        """Micro-averaged F1 of the change class."""
        pred = self.predict(X)
        y = check_labels(y, check_bitemporal_X(X, self.patch_size))
        counts = ConfusionCounts()
        for p, t in zip(pred, y):
            counts = counts + confusion(p, t)
        return metrics(counts).f1


class SceneTiler(TransformerMixin, BaseEstimator):
    """Turn a ``(scene_t1, scene_t2, label_scene)`` triple into ``(X, y)`` stacks."""

    def __init__(self, tile_size=256, stride=None):
        self.tile_size = tile_size
        self.stride = stride

    def fit(self, scenes=None, y=None):
        return self

    def transform(self, scenes):
        t1, t2, label = scenes
        samples = extract_samples(t1, t2, label, self.tile_size, self.stride)
        return (np.stack([s.images() for s in samples]),
                np.stack([s.label for s in samples]))


class ScaleDegrader(TransformerMixin, BaseEstimator):
    """Block-average then nearest-upsample every image of ``X`` by ``factor``."""

    def __init__(self, factor=2):
        self.factor = factor

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        X = check_bitemporal_X(X)
        out = np.empty_like(X)
        for i in range(X.shape[0]):
            for j in range(4):
                out[i, j] = degrade(X[i, j], self.factor)
        return out

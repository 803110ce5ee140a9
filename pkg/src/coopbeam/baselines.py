"""Reference predictors sharing the model's predict_proba(batch) protocol.

Each returns a (batch, n_classes) float64 row-stochastic array so the metric
pipeline treats them exactly like a trained model.
"""

from __future__ import annotations

import numpy as np

from .dataset import Batch
from .errors import ConfigError


class PersistencePredictor:
    """Always predicts the currently optimal label (one-hot at y_now)."""

    def __init__(self, n_classes: int):
        self.n_classes = int(n_classes)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        y = np.asarray(batch.y_now)
        if y.min() < 1 or y.max() > self.n_classes:
            raise ConfigError(f"y_now outside 1..{self.n_classes}")
        p = np.zeros((y.shape[0], self.n_classes))
        p[np.arange(y.shape[0]), y - 1] = 1.0
        return p


class OraclePredictor:
    """Reads the true next-step gains; one-hot at their argmax."""

    def __init__(self, n_classes: int):
        self.n_classes = int(n_classes)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        gains = np.asarray(batch.gains_next)
        if gains.shape[1] != self.n_classes:
            raise ConfigError(
                f"gains have {gains.shape[1]} classes, expected {self.n_classes}"
            )
        p = np.zeros((gains.shape[0], self.n_classes))
        p[np.arange(gains.shape[0]), np.argmax(gains, axis=1)] = 1.0
        return p


class UniformRandomPredictor:
    """Seeded uniform class choice per sample (one-hot), call-order stable."""

    def __init__(self, n_classes: int, seed: int = 0):
        self.n_classes = int(n_classes)
        self._rng = np.random.default_rng(seed)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        n = batch.size
        picks = self._rng.integers(0, self.n_classes, size=n)
        p = np.zeros((n, self.n_classes))
        p[np.arange(n), picks] = 1.0
        return p

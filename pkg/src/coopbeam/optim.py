"""Adaptive-moment optimizer over named parameter blocks."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import ParamBlock
from .errors import DivergedError


class Adam:
    """Standard Adam with bias correction.

    Non-trainable blocks are skipped outright. A non-finite gradient on any
    trainable block aborts the whole step before touching any parameter, so
    a failed step leaves the model unchanged.
    """

    def __init__(
        self,
        blocks: Sequence[ParamBlock],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.blocks = list(blocks)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}
        for blk in self.blocks:
            if blk.trainable:
                self._m[blk.name] = np.zeros_like(blk.tensor.data)
                self._v[blk.name] = np.zeros_like(blk.tensor.data)

    def zero_grad(self) -> None:
        for blk in self.blocks:
            blk.tensor.grad = None

    def step(self) -> None:
        live = []
        for blk in self.blocks:
            if not blk.trainable or blk.tensor.grad is None:
                continue
            if not np.all(np.isfinite(blk.tensor.grad)):
                raise DivergedError(f"non-finite gradient in block {blk.name!r}; step aborted")
            live.append(blk)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for blk in live:
            g = blk.tensor.grad
            m = self._m[blk.name]
            v = self._v[blk.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            blk.tensor.data -= self.lr * update

"""Adam optimizer with bias correction."""

from __future__ import annotations

import logging

import numpy as np

from .tensor import ParameterSet

log = logging.getLogger(__name__)


class Adam:
    """Per-parameter first/second moment updates over a ParameterSet.

    Defaults follow the training recipe: lr 0.0002 with first-moment decay
    0.5; the second-moment decay and epsilon are the conventional 0.999 and
    1e-8. Only trainable parameters are touched. Moments are created lazily
    as zeros and are part of checkpoint state, as is the step counter t.
    """

    def __init__(self, params: ParameterSet, lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for path, p in self.params.trainable():
            if p.grad is None:
                log.warning("adam: no gradient for %s, skipped", path)
                continue
            g = p.grad
            m = self.m.get(path)
            if m is None:
                m = self.m[path] = np.zeros_like(p.data)
                self.v[path] = np.zeros_like(p.data)
            v = self.v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

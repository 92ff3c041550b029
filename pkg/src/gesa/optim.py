"""Adam optimizer and the cosine learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import MissingGradientError
from .nn import ParameterStore


class Adam:
    """Standard Adam with bias correction; state kept per parameter name."""

    def __init__(self, store: ParameterStore, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.store = store
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self._m = {n: np.zeros_like(p.data, dtype=np.float64) for n, p in store.items()}
        self._v = {n: np.zeros_like(p.data, dtype=np.float64) for n, p in store.items()}

    def step(self, grads: dict, lr: float | None = None) -> None:
        missing = [n for n in self.store.names() if n not in grads]
        if missing:
            raise MissingGradientError(f"gradients missing for {missing}")
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            g = grads[name]
            g = g.data if isinstance(g, Tensor) else np.asarray(g)
            g = g.astype(np.float64)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.dtype)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine annealing from base_lr to 0 over total_steps."""
    frac = min(max(step, 0), total_steps) / max(total_steps, 1)
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * frac))

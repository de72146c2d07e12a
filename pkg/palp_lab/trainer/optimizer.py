from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass(frozen=True, eq=False)
class AdamOptimizer:
    """
    Adaptive moment estimation over named arrays.

    The optimizer is a value: `apply` returns the updated arrays together with the next
    optimizer state and leaves this one untouched.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    count: int = 0
    m: Mapping[str, np.ndarray] = field(default_factory=dict)
    v: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}")

    def apply(
            self,
            params: Mapping[str, np.ndarray],
            grads: Mapping[str, np.ndarray],
    ) -> tuple[dict[str, np.ndarray], "AdamOptimizer"]:
        count = self.count + 1
        m, v = dict(self.m), dict(self.v)
        updated = {}
        for name, g in grads.items():
            param = params[name]
            if g.shape != param.shape:
                raise ValueError(f"Gradient of {name} has shape {g.shape}, parameter has {param.shape}")
            m[name] = self.beta1 * self.m.get(name, np.zeros_like(param)) + (1.0 - self.beta1) * g
            v[name] = self.beta2 * self.v.get(name, np.zeros_like(param)) + (1.0 - self.beta2) * g * g
            m_hat = m[name] / (1.0 - self.beta1 ** count)
            v_hat = v[name] / (1.0 - self.beta2 ** count)
            updated[name] = param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated, AdamOptimizer(self.lr, self.beta1, self.beta2, self.eps, count, m, v)

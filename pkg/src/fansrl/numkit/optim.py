"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ContractViolation
from .tensor import Tensor


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Update ``params`` in place (their ``data`` is replaced) and return the new state."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractViolation("params, grads and optimizer state are not aligned")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    m_new, v_new = [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ContractViolation(f"grad shape {g.shape} != param shape {p.data.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m_new.append(m)
        v_new.append(v)
    return AdamState(m_new, v_new, t)


@dataclass
class Adam:
    """Stateful wrapper over adam_step for a fixed parameter list."""

    params: list[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = AdamState.zeros_like(self.params)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.state = adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

"""Named parameters and the ADAM update."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class Parameter:
    name: str
    value: Tensor
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0

    def __post_init__(self):
        self.value.requires_grad = True
        self.value.name = self.name
        self.adam_m = np.zeros_like(self.value.data)
        self.adam_v = np.zeros_like(self.value.data)

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad


class ParameterStore(dict):
    """Mapping of unique parameter names to :class:`Parameter`."""

    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(name, Tensor(data))
        self[name] = p
        return p

    def tensor(self, name: str) -> Tensor:
        return self[name].value

    def zero_grad(self) -> None:
        for p in self.values():
            p.value.grad = None

    def numel(self) -> int:
        return sum(p.value.numel() for p in self.values())


class MissingGradientError(RuntimeError):
    pass


def adam_step(params: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.99,
              eps: float = 1e-8) -> None:
    """One bias-corrected ADAM update over every parameter, then clear grads.

    ``lr == 0`` is accepted and leaves values untouched (moments still advance).
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for p in params.values():
        if p.value.grad is None:
            raise MissingGradientError(f"parameter {p.name!r} has no gradient")
    for p in params.values():
        g = p.value.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        upd = lr * m_hat / (np.sqrt(v_hat) + eps)
        p.value.data = (p.value.data - upd).astype(p.value.dtype)
        p.value.grad = None

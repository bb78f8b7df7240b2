"""First-order gradient optimizers over named parameter groups."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor


@dataclass
class ParamGroup:
    name: str
    tensor: Tensor
    lr: float

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"group {self.name!r}: lr must be positive")


def _check_groups(groups):
    names = [g.name for g in groups]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate parameter group names: {names}")
    return list(groups)


def _grad_of(group: ParamGroup) -> np.ndarray:
    g = group.tensor.grad
    if g is None:
        raise ContractError(f"group {group.name!r} has no gradient; run backward first")
    return g


def zero_grads(groups) -> None:
    for group in groups:
        group.tensor.zero_grad()


class GradientDescent:
    """theta <- theta - lr * grad, independently per group."""

    def __init__(self, groups):
        self.groups = _check_groups(groups)

    def step(self) -> None:
        for group in self.groups:
            group.tensor.data -= group.lr * _grad_of(group)


class Adam:
    """Adam with bias correction (first/second moment running averages)."""

    def __init__(self, groups, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.groups = _check_groups(groups)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(g.tensor.data) for g in self.groups]
        self._v = [np.zeros_like(g.tensor.data) for g in self.groups]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, group in enumerate(self.groups):
            g = _grad_of(group)
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * g
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * (g * g)
            m_hat = self._m[i] / (1.0 - b1 ** self.t)
            v_hat = self._v[i] / (1.0 - b2 ** self.t)
            group.tensor.data -= group.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS = {"gd": GradientDescent, "adam": Adam}


def build_optimizer(kind: str, groups, **kwargs):
    if kind not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {kind!r}; expected one of {sorted(OPTIMIZERS)}")
    return OPTIMIZERS[kind](groups, **kwargs)

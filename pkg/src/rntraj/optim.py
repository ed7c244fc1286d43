"""SGD with coupled weight decay and AdaGrad, operating in place on tensors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str = "sgd"
    learning_rate: float = 1e-2
    weight_decay: float = 0.0
    epsilon: float = 1e-10
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adagrad"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.epsilon <= 0:
            raise ValueError("learning_rate/weight_decay must be nonnegative and epsilon positive")


def _key(p: Tensor, i: int) -> str:
    return p.name if p.name is not None else f"#{i}"


def _check_grads(params: Sequence[Tensor]) -> None:
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {_key(p, i)} has no gradient")


def sgd_step(params: Sequence[Tensor], state: OptimizerState) -> None:
    """p <- p - lr * (grad + wd * p), then zero the gradients."""
    if state.kind != "sgd":
        raise ValueError(f"sgd_step on a {state.kind} state")
    _check_grads(params)
    lr, wd = state.learning_rate, state.weight_decay
    for p in params:
        g = p.grad + wd * p.data if wd else p.grad
        p.data = p.data - lr * g
        p.grad = np.zeros_like(p.data)
    state.steps += 1


def adagrad_step(params: Sequence[Tensor], state: OptimizerState) -> None:
    """Per-coordinate steps scaled by the root of the accumulated squared gradient."""
    if state.kind != "adagrad":
        raise ValueError(f"adagrad_step on a {state.kind} state")
    _check_grads(params)
    lr, wd, eps = state.learning_rate, state.weight_decay, state.epsilon
    for i, p in enumerate(params):
        g = p.grad + wd * p.data if wd else p.grad
        key = _key(p, i)
        acc = state.accumulators.get(key)
        if acc is None:
            acc = np.zeros_like(p.data)
        acc = acc + g * g
        state.accumulators[key] = acc
        p.data = p.data - lr * g / (np.sqrt(acc) + eps)
        p.grad = np.zeros_like(p.data)
    state.steps += 1


def step(params: Sequence[Tensor], state: OptimizerState) -> None:
    if state.kind == "sgd":
        sgd_step(params, state)
    else:
        adagrad_step(params, state)

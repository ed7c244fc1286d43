"""Parameter containers and the few layer shapes the models share."""
from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import SeededRNG
from .tensor import Tensor


class ParamSet:
    """Ordered name -> trainable tensor mapping with a freeze switch."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.frozen = False

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=not self.frozen, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def tensors(self, prefix: str = "") -> list[Tensor]:
        return [t for n, t in self._params.items() if n.startswith(prefix)]

    def freeze(self) -> None:
        self.frozen = True
        for t in self._params.values():
            t.requires_grad = False
            t.grad = None

    def zero_grad(self) -> None:
        for t in self._params.values():
            if t.requires_grad:
                t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, t in self._params.items():
            v = np.asarray(values[n], dtype=np.float64)
            if v.shape != t.shape:
                raise ValueError(f"parameter {n}: shape {v.shape} != {t.shape}")
            t.data = v.copy()

    @contextmanager
    def substituted(self, tensors: dict[str, Tensor]):
        """Temporarily route lookups of the given names to other tensors (gradient checks)."""
        saved = {n: self._params[n] for n in tensors}
        self._params.update(tensors)
        try:
            yield self
        finally:
            self._params.update(saved)

    def count(self) -> int:
        return sum(t.size for t in self._params.values())


def uniform_init(rng: SeededRNG, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


def add_linear(params: ParamSet, rng: SeededRNG, name: str, n_in: int, n_out: int, bias: bool = True) -> None:
    params.add(f"{name}.weight", uniform_init(rng, (n_in, n_out), n_in))
    if bias:
        params.add(f"{name}.bias", uniform_init(rng, (n_out,), n_in))


def linear(params: ParamSet, name: str, x: Tensor) -> Tensor:
    out = T.matmul(x, params[f"{name}.weight"])
    b = f"{name}.bias"
    return T.add(out, params[b]) if b in params else out


def shift_stack(x: Tensor, kernel: int = 3) -> Tensor:
    """Zero-padded 'same' unfolding along axis 0: (L, ..., C) -> (L, ..., kernel*C).

    Slot k of the output holds x[t + k - kernel//2].
    """
    pad = kernel // 2
    length = x.shape[0]
    zeros = Tensor(np.zeros((pad,) + x.shape[1:]))
    padded = T.concat([zeros, x, zeros], axis=0) if pad else x
    taps = [padded[k:k + length] for k in range(kernel)]
    return T.concat(taps, axis=-1)


def conv_same(params: ParamSet, name: str, x: Tensor, kernel: int = 3) -> Tensor:
    """1-D convolution along axis 0 with zero padding; weight is (kernel*C_in, C_out)."""
    return linear(params, name, shift_stack(x, kernel))


def l1_l2(tensors: list[Tensor]) -> tuple[Tensor, Tensor]:
    l1 = None
    l2 = None
    for t in tensors:
        a = T.sum_(T.abs_(t))
        s = T.sum_(T.square(t))
        l1 = a if l1 is None else T.add(l1, a)
        l2 = s if l2 is None else T.add(l2, s)
    if l1 is None:
        return Tensor(0.0), Tensor(0.0)
    return l1, l2

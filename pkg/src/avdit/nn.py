"""Minimal module system: named parameters with a frozen/trainable tag."""

from __future__ import annotations

import copy
from typing import Iterator

import numpy as np

from . import tensor as tn
from .tensor import Tensor

BACKBONE = "backbone"
NEW = "new"


class Parameter(Tensor):
    """A leaf tensor that knows where it came from.

    ``origin`` is ``"backbone"`` for weights inherited from the image model and
    ``"new"`` for inserted layers. Backbone weight matrices are frozen; biases
    and new parameters train.
    """

    __slots__ = ("origin", "is_bias")

    def __init__(self, data, origin: str, is_bias: bool = False):
        super().__init__(data)
        if origin not in (BACKBONE, NEW):
            raise ValueError(f"unknown parameter origin {origin!r}")
        self.origin = origin
        self.is_bias = is_bias
        self.requires_grad = self.trainable_by_rule

    @property
    def trainable_by_rule(self) -> bool:
        return self.origin == NEW or self.is_bias

    @property
    def tag(self) -> str:
        return "trainable" if self.requires_grad else "frozen"


class Init:
    """Parameter factory. ``meta=True`` builds zero-stride placeholders (shape only, no memory)."""

    def __init__(self, seed: int, meta: bool = False, dtype=np.float32):
        self.meta = meta
        self.dtype = dtype
        self._seed = seed
        self._streams: dict[str, np.random.Generator] = {}

    def rng(self, stream: str) -> np.random.Generator:
        if stream not in self._streams:
            key = [self._seed] + [ord(ch) for ch in stream]
            self._streams[stream] = np.random.default_rng(key)
        return self._streams[stream]

    def _wrap(self, arr_fn, shape):
        if self.meta:
            return np.broadcast_to(np.zeros((), dtype=self.dtype), shape)
        return np.ascontiguousarray(arr_fn(), dtype=self.dtype)

    def xavier(self, shape, stream: str, gain: float = 1.0):
        fan_in, fan_out = shape[0], shape[-1]
        bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
        return self._wrap(lambda: self.rng(stream).uniform(-bound, bound, size=shape), shape)

    def normal(self, shape, stream: str, std: float):
        return self._wrap(lambda: self.rng(stream).standard_normal(shape) * std, shape)

    def kaiming_uniform(self, shape, stream: str):
        # fan_in taken from the input axis; matches the usual LoRA A init (a = sqrt(5))
        bound = 1.0 / np.sqrt(shape[0])
        return self._wrap(lambda: self.rng(stream).uniform(-bound, bound, size=shape), shape)

    def zeros(self, shape):
        return self._wrap(lambda: np.zeros(shape), shape)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise tn.ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Deep copy with every parameter cast to ``dtype``."""
        clone = copy.deepcopy(self)
        for p in clone.parameters():
            p.data = np.array(p.data, dtype=dtype)
            p.grad = None
        clone._on_cast(dtype)
        return clone

    def _on_cast(self, dtype) -> None:
        for val in vars(self).values():
            if isinstance(val, Module):
                val._on_cast(dtype)
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        item._on_cast(dtype)
            elif isinstance(val, dict):
                for item in val.values():
                    if isinstance(item, Module):
                        item._on_cast(dtype)


class Linear(Module):
    def __init__(self, init: Init, d_in: int, d_out: int, origin: str, stream: str,
                 weight: str = "xavier", bias: bool = True, gain: float = 1.0):
        if weight == "xavier":
            w = init.xavier((d_in, d_out), stream, gain)
        elif weight == "zeros":
            w = init.zeros((d_in, d_out))
        else:
            w = init.normal((d_in, d_out), stream, float(weight))
        self.weight = Parameter(w, origin)
        self.bias = Parameter(init.zeros((d_out,)), origin, is_bias=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return tn.linear(x, self.weight, self.bias)


class LoRA(Module):
    """Low-rank delta ``(x A) B`` added to a frozen projection; ``B`` starts at zero."""

    def __init__(self, init: Init, d_in: int, d_out: int, rank: int, stream: str):
        self.A = Parameter(init.kaiming_uniform((d_in, rank), stream), NEW)
        self.B = Parameter(init.zeros((rank, d_out)), NEW)

    def __call__(self, x: Tensor) -> Tensor:
        return tn.matmul(tn.matmul(x, self.A), self.B)


def project(x: Tensor, base: Linear, lora: LoRA | None = None) -> Tensor:
    y = base(x)
    if lora is not None:
        y = tn.add(y, lora(x))
    return y

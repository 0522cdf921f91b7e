"""Layers built on the autograd tensors: linear, MLP, LSTM cell."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

ACTIVATIONS = {"silu": ag.silu, "tanh": ag.tanh}


class Module:
    """Parameter container; ``parameters()`` yields in declaration order."""

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for value in vars(self).values():
            out.extend(_collect(value))
        return out

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            yield from _named(value, f"{prefix}{key}")

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def load_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} tensors, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.shape != tuple(a.shape):
                raise ValueError(f"parameter {p.name}: shape {a.shape} != {p.shape}")
            p.data = np.array(a, dtype=np.float64)


def _collect(value) -> list[Tensor]:
    if isinstance(value, Tensor):
        return [value] if value.requires_grad else []
    if isinstance(value, Module):
        return value.parameters()
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_collect(v))
        return out
    return []


def _named(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _named(v, f"{name}.{i}")


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init_scale: float = 1.0):
        bound = init_scale / np.sqrt(n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(n_out), requires_grad=True, name="bias")

    def __call__(self, x) -> Tensor:
        return ag.add(ag.matmul(x, self.weight), self.bias)


class MLP(Module):
    """Stack of Linear layers with an activation between (not after) them."""

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: str = "silu",
        final_activation: bool = False,
        out_scale: float = 1.0,
    ):
        self.layers = [
            Linear(a, b, rng, init_scale=(out_scale if i == len(sizes) - 2 else 1.0))
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        self.activation = activation
        self.final_activation = final_activation

    def __call__(self, x) -> Tensor:
        act = ACTIVATIONS[self.activation]
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1 or self.final_activation:
                h = act(h)
        return h


class LSTMCell(Module):
    """Standard LSTM cell; gates [input, forget, cell, output] from one matmul."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_hidden = n_hidden
        self.linear = Linear(n_in + n_hidden, 4 * n_hidden, rng)
        # forget-gate bias of 1 keeps early gradients alive
        self.linear.bias.data[n_hidden : 2 * n_hidden] = 1.0

    def zero_state(self, batch: int) -> tuple[Tensor, Tensor]:
        return Tensor(np.zeros((batch, self.n_hidden))), Tensor(np.zeros((batch, self.n_hidden)))

    def __call__(self, x, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        z = self.linear(ag.concat([x, h], axis=-1))
        n = self.n_hidden
        i = ag.sigmoid(z[:, :n])
        f = ag.sigmoid(z[:, n : 2 * n])
        g = ag.tanh(z[:, 2 * n : 3 * n])
        o = ag.sigmoid(z[:, 3 * n :])
        c_next = ag.add(ag.mul(f, c), ag.mul(i, g))
        h_next = ag.mul(o, ag.tanh(c_next))
        return h_next, c_next


def one_hot(index, n: int) -> np.ndarray:
    idx = np.asarray(index, dtype=np.int64)
    out = np.zeros(idx.shape + (n,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out

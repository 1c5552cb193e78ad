"""Tiny module system: parameter registration, train/eval mode, checkpoints.

Modules register Parameters, numpy buffers (running statistics) and child
modules on attribute assignment, in deterministic insertion order — that
order is the checkpoint layout, so keep constructor bodies stable.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype


class Parameter(Tensor):
    """A leaf tensor that optimizers update; always requires grad at creation."""

    def __init__(self, data):
        super().__init__(np.asarray(data, dtype=default_dtype()), requires_grad=True)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def set_buffer(self, name: str, array: np.ndarray) -> None:
        if name not in self._buffers:
            raise KeyError(f"unknown buffer {name!r}")
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    # -- traversal ----------------------------------------------------------

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    # -- mode switches --------------------------------------------------------

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", bool(mode))
        return self

    def eval(self):
        return self.train(False)

    def requires_grad_(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = bool(flag)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._order = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module):
        idx = len(self._order)
        self._order.append(mod)
        self._children[str(idx)] = mod
        object.__setattr__(self, str(idx), mod)

    def __iter__(self):
        return iter(self._order)

    def __len__(self):
        return len(self._order)

    def __getitem__(self, i):
        return self._order[i]


def lecun_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Init used throughout: variance 1/fan_in suits selu-activated stacks."""
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(lecun_normal(rng, (n_in, n_out), n_in))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv2d(Module):
    """Stride-1 2-D convolution on channels-last maps; weight (kh, kw, C, O)."""

    def __init__(self, c_in: int, c_out: int, kernel, rng: np.random.Generator,
                 pad=(0, 0), bias: bool = True):
        super().__init__()
        kh, kw = kernel
        self.pad = tuple(pad)
        self.weight = Parameter(lecun_normal(rng, (kh, kw, c_in, c_out), kh * kw * c_in))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, pad=self.pad)


class GRU(Module):
    """Single-layer gated recurrent unit; returns the final hidden state.

    Gates follow the standard formulation: reset r and update z are sigmoid
    units, the candidate uses tanh with the reset applied to the recurrent
    term, and the new state interpolates h <- (1-z)*h + z*n.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.n_hidden = n_hidden

        def mat(fan_in, shape):
            return Parameter(lecun_normal(rng, shape, fan_in))

        self.w_r = mat(n_in, (n_in, n_hidden))
        self.u_r = mat(n_hidden, (n_hidden, n_hidden))
        self.b_r = Parameter(np.zeros(n_hidden))
        self.w_z = mat(n_in, (n_in, n_hidden))
        self.u_z = mat(n_hidden, (n_hidden, n_hidden))
        self.b_z = Parameter(np.zeros(n_hidden))
        self.w_n = mat(n_in, (n_in, n_hidden))
        self.u_n = mat(n_hidden, (n_hidden, n_hidden))
        self.b_n = Parameter(np.zeros(n_hidden))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise ValueError("GRU expects (B, T, C)")
        bsz, steps, _ = x.shape
        h = Tensor(np.zeros((bsz, self.n_hidden), dtype=x.dtype))
        for t in range(steps):
            xt = x[:, t, :]
            r = (xt @ self.w_r + h @ self.u_r + self.b_r).sigmoid()
            z = (xt @ self.w_z + h @ self.u_z + self.b_z).sigmoid()
            n = (xt @ self.w_n + r * (h @ self.u_n) + self.b_n).tanh()
            h = (1.0 - z) * h + z * n
        return h

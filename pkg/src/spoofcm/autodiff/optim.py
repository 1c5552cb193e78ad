"""Adam and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np


class Adam:
    """Adam with bias correction; one shared step counter for all parameters.

    Construct from ``model.named_parameters()`` so optimizer state can be
    checkpointed by parameter name.  A non-finite gradient raises instead of
    corrupting parameters.
    """

    def __init__(self, named_params, lr: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        named_params = list(named_params)
        if named_params and not isinstance(named_params[0], tuple):
            named_params = [(str(i), p) for i, p in enumerate(named_params)]
        names = [n for n, _ in named_params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.params = named_params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in named_params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else float(lr)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict:
        """Flat name->array view of the state, for checkpointing."""
        out = {"t": np.asarray(self.t, dtype=np.int64)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.t = int(arrays["t"])
        for name in self.m:
            for slot, store in (("m", self.m), ("v", self.v)):
                key = f"{slot}.{name}"
                if key not in arrays:
                    raise KeyError(f"optimizer state missing {key!r}")
                if arrays[key].shape != store[name].shape:
                    raise ValueError(f"optimizer state shape mismatch for {key!r}")
                store[name] = arrays[key].astype(store[name].dtype, copy=True)


def cosine_lr(epoch: int, total_epochs: int, lr0: float, lr_min: float = 0.0) -> float:
    """Half-cosine decay from lr0 (epoch 0) to lr_min (epoch == total_epochs)."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    frac = min(max(epoch / total_epochs, 0.0), 1.0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * frac))

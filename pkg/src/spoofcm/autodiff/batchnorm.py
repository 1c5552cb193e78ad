"""Batch normalization with two independent running-statistics banks.

One set of affine parameters (gamma, beta) is shared; running mean/var are
kept per bank ("main" for clean inputs, "aux" for perturbed ones) and the
active bank is selected by attribute.  Training mode normalizes with batch
statistics and, unless suppressed, folds them into the active bank.
Evaluation always normalizes with the *main* bank's running statistics,
whatever the selector says — the auxiliary bank never leaks into inference.
"""

from __future__ import annotations

import numpy as np

from .module import Module, Parameter
from .tensor import Tensor, default_dtype

BANKS = ("main", "aux")


class DualBatchNorm(Module):
    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.num_features = int(num_features)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = Parameter(np.ones(num_features))
        self.beta = Parameter(np.zeros(num_features))
        for bank in BANKS:
            self.register_buffer(f"running_mean_{bank}", np.zeros(num_features, dtype=default_dtype()))
            self.register_buffer(f"running_var_{bank}", np.ones(num_features, dtype=default_dtype()))
        self.bank = "main"
        self.update_stats = True

    def _running(self, bank: str):
        return self._buffers[f"running_mean_{bank}"], self._buffers[f"running_var_{bank}"]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim not in (2, 4):
            raise ValueError("DualBatchNorm expects (B, C) or (B, H, W, C)")
        if x.shape[-1] != self.num_features:
            raise ValueError(
                f"DualBatchNorm: got {x.shape[-1]} channels, expected {self.num_features}")
        axes = tuple(range(x.ndim - 1))
        n = 1
        for ax in axes:
            n *= x.shape[ax]
        if n == 0:
            raise ValueError("DualBatchNorm: empty batch")

        if self.training:
            if self.bank not in BANKS:
                raise ValueError(f"unknown statistics bank {self.bank!r}")
            # one fused node: the op-by-op graph spends most of its time on
            # full-map temporaries, and BN sits in every block twice
            gamma, beta = self.gamma, self.beta
            mu = x.data.mean(axis=axes)
            xc = x.data - mu
            var = np.mean(xc * xc, axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = xc * inv
            out = xhat * gamma.data + beta.data
            xref = x

            def backward(g):
                if beta.requires_grad:
                    beta._accumulate(g.sum(axis=axes))
                if gamma.requires_grad:
                    gamma._accumulate((g * xhat).sum(axis=axes))
                if xref.requires_grad:
                    gy = g * gamma.data
                    dx = inv * (gy - gy.mean(axis=axes)
                                - xhat * np.mean(gy * xhat, axis=axes))
                    xref._accumulate(dx)

            result = Tensor._node(out, (x, gamma, beta), backward)
            if self.update_stats:
                m = self.momentum
                rmean, rvar = self._running(self.bank)
                batch_var = var * (n / (n - 1)) if n > 1 else var
                rmean *= 1.0 - m
                rmean += m * mu
                rvar *= 1.0 - m
                rvar += m * batch_var
            return result

        # eval: main-bank running statistics only
        rmean, rvar = self._running("main")
        scale = (self.gamma * Tensor((rvar + self.eps) ** -0.5)).reshape(
            (1,) * (x.ndim - 1) + (self.num_features,))
        shift = self.beta - Tensor(rmean) * self.gamma * Tensor((rvar + self.eps) ** -0.5)
        return x * scale + shift


def set_bn_bank(root: Module, bank: str) -> None:
    if bank not in BANKS:
        raise ValueError(f"unknown statistics bank {bank!r}")
    for m in root.modules():
        if isinstance(m, DualBatchNorm):
            m.bank = bank


def set_bn_update(root: Module, flag: bool) -> None:
    for m in root.modules():
        if isinstance(m, DualBatchNorm):
            m.update_stats = bool(flag)


def bn_fingerprint(root: Module, bank: str) -> np.ndarray:
    """Concatenated copy of one bank's running stats — cheap tamper check."""
    parts = []
    for m in root.modules():
        if isinstance(m, DualBatchNorm):
            rmean, rvar = m._running(bank)
            parts.append(rmean.copy())
            parts.append(rvar.copy())
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)

"""Feature-map attention blocks: squeeze-excite, CBAM, and SimAM.

All three refine a channels-last map (B, S, T, C) without changing its
shape.  SimAM is parameter-free: each neuron's weight comes from the closed
form of a per-neuron energy minimum, using whole-channel statistics with
denominator M = S*T.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Linear, Module, Parameter, Tensor, concat, conv2d, lecun_normal


class SEAttention(Module):
    """Channel attention from mean statistics through a bottleneck MLP.

    e_c = mean over (S, T); s = sigmoid(W2 relu(W1 e + b1) + b2); out = s * x.
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 8):
        super().__init__()
        if channels < reduction:
            raise ValueError(f"SE: channels {channels} < reduction {reduction}")
        if channels % reduction != 0:
            raise ValueError(f"SE: channels {channels} not divisible by reduction {reduction}")
        self.fc1 = Linear(channels, channels // reduction, rng)
        self.fc2 = Linear(channels // reduction, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        e = x.mean(axis=(1, 2))                       # (B, C)
        s = self.fc2(self.fc1(e).relu()).sigmoid()    # (B, C)
        b, c = s.shape
        return x * s.reshape(b, 1, 1, c)


class CBAMAttention(Module):
    """Channel gate from avg+max descriptors, then a spatial gate.

    x' = M_c(x) * x with M_c = sigmoid(mlp(avg) + mlp(max)) (shared mlp);
    x'' = M_ft(x') * x' with M_ft = sigmoid(conv7x7([mean_c; max_c])).
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 reduction: int = 8, spatial_kernel: int = 7):
        super().__init__()
        if channels < reduction:
            raise ValueError(f"CBAM: channels {channels} < reduction {reduction}")
        if channels % reduction != 0:
            raise ValueError(f"CBAM: channels {channels} not divisible by reduction {reduction}")
        self.fc1 = Linear(channels, channels // reduction, rng)
        self.fc2 = Linear(channels // reduction, channels, rng)
        k = int(spatial_kernel)
        if k % 2 != 1:
            raise ValueError("CBAM spatial kernel must be odd")
        self.spatial_pad = (k // 2, k // 2)
        self.spatial_w = Parameter(lecun_normal(rng, (k, k, 2, 1), k * k * 2))
        self.spatial_b = Parameter(np.zeros(1))

    def forward(self, x: Tensor) -> Tensor:
        b, s, t, c = x.shape
        avg = x.mean(axis=(1, 2))                                   # (B, C)
        mx = x.reshape(b, s * t, c).max(axis=1)                     # (B, C)
        gate = (self.fc2(self.fc1(avg).relu())
                + self.fc2(self.fc1(mx).relu())).sigmoid()          # (B, C)
        x1 = x * gate.reshape(b, 1, 1, c)

        mean_map = x1.mean(axis=3, keepdims=True)                   # (B, S, T, 1)
        max_map = x1.max(axis=3, keepdims=True)                     # (B, S, T, 1)
        desc = concat([mean_map, max_map], axis=3)                  # (B, S, T, 2)
        gate_ft = conv2d(desc, self.spatial_w, self.spatial_b,
                         pad=self.spatial_pad).sigmoid()            # (B, S, T, 1)
        return x1 * gate_ft


class SimAMAttention(Module):
    """Parameter-free neuron attention from a closed-form energy minimum.

    Per channel with statistics mu, var over all M = S*T neurons:
    e*(x) = 4 (var + lam) / ((x - mu)^2 + 2 var + 2 lam); out = sigmoid(1/e*) * x.
    """

    def __init__(self, simam_lambda: float = 1e-4):
        super().__init__()
        if simam_lambda <= 0:
            raise ValueError("simam_lambda must be positive")
        self.lam = float(simam_lambda)

    def forward(self, x: Tensor) -> Tensor:
        b, s, t, c = x.shape
        if s * t < 2:
            raise ValueError("SimAM needs at least 2 neurons per channel")
        mu = x.mean(axis=(1, 2), keepdims=True)                    # (B,1,1,C)
        d = x - mu
        var = (d * d).mean(axis=(1, 2), keepdims=True)             # (B,1,1,C)
        e = (var + self.lam) * 4.0 / (d * d + (var * 2.0 + 2.0 * self.lam))
        return (1.0 / e).sigmoid() * x


def simam_energy(x_map: np.ndarray, simam_lambda: float) -> np.ndarray:
    """Closed-form e* for a single-channel (S, T) map — test/oracle surface."""
    x = np.asarray(x_map, dtype=np.float64)
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return 4.0 * (var + simam_lambda) / ((x - mu) ** 2 + 2.0 * var + 2.0 * simam_lambda)


def simam_energy_exact(x_map: np.ndarray, simam_lambda: float) -> np.ndarray:
    """e* with per-neuron leave-one-out statistics.

    The per-neuron energy sums the squared residuals of the *other* M-1
    neurons, so its true minimum uses mean/variance that exclude the target
    neuron.  simam_energy (and the module) share one (mu, var) per channel as
    the usual cheap approximation; this form is the exact minimizer and is
    what a numeric minimization of the energy must reproduce.
    """
    x = np.asarray(x_map, dtype=np.float64)
    flat = x.ravel()
    m = flat.size
    if m < 2:
        raise ValueError("need at least 2 neurons")
    s1 = flat.sum()
    s2 = (flat * flat).sum()
    mu = (s1 - flat) / (m - 1)
    var = (s2 - flat * flat) / (m - 1) - mu * mu
    e = 4.0 * (var + simam_lambda) / ((flat - mu) ** 2 + 2.0 * var + 2.0 * simam_lambda)
    return e.reshape(x.shape)


def make_attention(kind: str, channels: int, rng: np.random.Generator,
                   se_reduction: int = 8, simam_lambda: float = 1e-4) -> Module | None:
    if kind == "none":
        return None
    if kind == "se":
        return SEAttention(channels, rng, se_reduction)
    if kind == "cbam":
        return CBAMAttention(channels, rng, se_reduction)
    if kind == "simam":
        return SimAMAttention(simam_lambda)
    raise ValueError(f"unknown attention kind {kind!r}")

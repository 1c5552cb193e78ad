"""Raw-waveform spoofing encoder: sinc frontend, pre-activation residual
blocks with pluggable attention, GRU aggregation, 64-d embedding head and a
2-way bias-free classifier.

Feature maps run channels-last (B, S, T, C) internally; reported shapes use
the logical (C, S, T) convention of the configuration tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import make_attention
from .autodiff import (GRU, Conv2d, DualBatchNorm, Linear, Module, ModuleList,
                       Parameter, Tensor, adaptive_avg_pool2d, lecun_normal,
                       maxpool2d, set_bn_bank)
from .sincfront import SincFrontend

ATTENTION_KINDS = ("none", "se", "cbam", "simam")
ATTENTION_POSITIONS = ("auto", "before_bn", "after_bn")


@dataclass
class EncoderConfig:
    input_len: int = 64600
    sample_rate: int = 16000
    num_filters: int = 70
    sinc_kernel_len: int = 129
    sinc_pool: tuple = (3, 3)
    block_channels: tuple = (32, 32, 64, 64, 64, 64)
    conv_kernel: tuple = (2, 3)
    block_pool: tuple = (1, 3)
    gru_hidden: int = 64
    embed_dim: int = 64
    num_classes: int = 2
    attention: str = "simam"
    attention_position: str = "auto"
    se_reduction: int = 8
    simam_lambda: float = 1e-4
    sinc_trainable: bool = False
    sinc_magnitude: bool = False

    def resolved_attention_position(self) -> str:
        """simam sits after the first conv (before the second BN); the
        parameterized gates sit right after the second BN."""
        if self.attention_position != "auto":
            return self.attention_position
        return "before_bn" if self.attention == "simam" else "after_bn"

    def validate(self) -> None:
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}")
        if self.attention_position not in ATTENTION_POSITIONS:
            raise ValueError(f"attention_position must be one of {ATTENTION_POSITIONS}")
        if len(self.block_channels) < 1:
            raise ValueError("need at least one residual block")
        self.layer_shapes()  # raises if some stage collapses to zero size

    def layer_shapes(self) -> list:
        """[(stage name, (C, S, T))] by pure shape arithmetic."""
        t = self.input_len - self.sinc_kernel_len + 1
        s = self.num_filters
        if t < 1:
            raise ValueError("input_len shorter than the sinc kernel")
        shapes = [("sinc", (1, s, t))]
        s, t = s // self.sinc_pool[0], t // self.sinc_pool[1]
        if s < 1 or t < 1:
            raise ValueError("frontend pool collapses the feature map")
        shapes.append(("frontend", (1, s, t)))
        kh, kw = self.conv_kernel
        for i, c in enumerate(self.block_channels):
            # conv1 pad (1,1), conv2 pad (0,1): S -> S+1 -> S, T preserved
            s_after = (s + 2 - kh + 1) - kh + 1
            if s_after != s:
                raise ValueError("padding arithmetic no longer preserves the bin axis")
            t = t // self.block_pool[1]
            if t < 1:
                raise ValueError(f"time axis exhausted at block {i + 1}")
            shapes.append((f"block{i + 1}", (c, s, t)))
        shapes.append(("pooled", (self.block_channels[-1], 1, t)))
        shapes.append(("gru", (self.gru_hidden,)))
        shapes.append(("embedding", (self.embed_dim,)))
        shapes.append(("logits", (self.num_classes,)))
        return shapes


class ResBlock(Module):
    """Pre-activation residual block: BN-SeLU-conv-[attn]-BN-[attn]-SeLU-conv,
    skip (1x1 projection on channel change), then time max-pool."""

    def __init__(self, c_in: int, c_out: int, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        kh, kw = cfg.conv_kernel
        self.bn1 = DualBatchNorm(c_in)
        self.conv1 = Conv2d(c_in, c_out, (kh, kw), rng, pad=(1, 1))
        self.bn2 = DualBatchNorm(c_out)
        self.conv2 = Conv2d(c_out, c_out, (kh, kw), rng, pad=(0, 1))
        self.skip = None
        if c_in != c_out:
            self.skip = Conv2d(c_in, c_out, (1, 1), rng, pad=(0, 0), bias=False)
        self.attn = make_attention(cfg.attention, c_out, rng,
                                   cfg.se_reduction, cfg.simam_lambda)
        self.attn_position = cfg.resolved_attention_position()
        self.pool = cfg.block_pool

    def forward(self, x: Tensor) -> Tensor:
        h = self.bn1(x).selu()
        h = self.conv1(h)
        if self.attn is not None and self.attn_position == "before_bn":
            h = self.attn(h)
        h = self.bn2(h)
        if self.attn is not None and self.attn_position == "after_bn":
            h = self.attn(h)
        h = h.selu()
        h = self.conv2(h)
        shortcut = self.skip(x) if self.skip is not None else x
        return maxpool2d(h + shortcut, self.pool)


class SpoofEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.frontend = SincFrontend(cfg.num_filters, cfg.sinc_kernel_len,
                                     cfg.sample_rate, pool=cfg.sinc_pool,
                                     trainable=cfg.sinc_trainable,
                                     magnitude=cfg.sinc_magnitude)
        blocks = []
        c_in = 1
        for c_out in cfg.block_channels:
            blocks.append(ResBlock(c_in, c_out, cfg, rng))
            c_in = c_out
        self.blocks = ModuleList(blocks)
        self.gru = GRU(cfg.block_channels[-1], cfg.gru_hidden, rng)
        self.fc_embed = Linear(cfg.gru_hidden, cfg.embed_dim, rng)
        # 2 class vectors, bias fixed at zero: logits = emb @ class_vectors
        self.class_vectors = Parameter(
            lecun_normal(rng, (cfg.embed_dim, cfg.num_classes), cfg.embed_dim))

    def features(self, wave: Tensor, collect: list | None = None) -> Tensor:
        """Run the convolutional trunk; optionally collect per-stage maps."""
        if wave.ndim != 2:
            raise ValueError("expected a (B, L) waveform batch")
        if wave.shape[1] != self.cfg.input_len:
            raise ValueError(
                f"waveform length {wave.shape[1]} != configured input_len {self.cfg.input_len}")
        fmap = self.frontend(wave)
        if collect is not None:
            collect.append(("frontend", fmap.shape))
        for i, block in enumerate(self.blocks):
            fmap = block(fmap)
            if collect is not None:
                collect.append((f"block{i + 1}", fmap.shape))
        return fmap

    def forward(self, wave: Tensor, collect: list | None = None):
        fmap = self.features(wave, collect)
        pooled = adaptive_avg_pool2d(fmap, (1, None))        # (B, 1, T', C)
        if collect is not None:
            collect.append(("pooled", pooled.shape))
        b, _, t, c = pooled.shape
        seq = pooled.reshape(b, t, c)
        hidden = self.gru(seq)                               # (B, gru_hidden)
        emb = self.fc_embed(hidden)                          # (B, embed_dim)
        logits = emb @ self.class_vectors                    # (B, 2), zero bias
        return emb, logits

    def encode(self, wave: Tensor, bank: str = "main", train: bool = False):
        """Forward with an explicit statistics-bank/mode selection, restored after."""
        prev_training = self.training
        set_bn_bank(self, bank)
        self.train(train)
        try:
            return self.forward(wave)
        finally:
            self.train(prev_training)
            set_bn_bank(self, "main")

    def observed_shapes(self, batch: int = 1) -> list:
        """Actual forward shapes in logical (C, S, T) form, for conformance checks."""
        wave = Tensor(np.zeros((batch, self.cfg.input_len)))
        collect: list = []
        prev = self.training
        try:
            self.eval()
            emb, logits = self.forward(wave, collect)
        finally:
            self.train(prev)
        out = [(name, (shp[3], shp[1], shp[2])) for name, shp in collect]
        out.append(("embedding", (emb.shape[1],)))
        out.append(("logits", (logits.shape[1],)))
        return out

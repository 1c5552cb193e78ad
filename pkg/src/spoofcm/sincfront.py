"""Fixed sinc band-pass filterbank frontend over raw waveforms.

Band edges are mel-uniform; each kernel is the difference of two windowed
ideal low-pass filters, so filter f passes (f_low_f, f_high_f).  Kernels are
built once, mirrored exactly (h[n] == h[-n] bitwise), and by default do not
train.  The frontend module applies the filterbank, max-pools the (bin, time)
map 3x3, then dual-bank batch norm and SeLU — giving the 1-channel feature
map the residual stack consumes.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (DualBatchNorm, Module, Parameter, Tensor, conv1d,
                       default_dtype, maxpool2d)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(num_filters: int, sample_rate: int = 16000,
                   f_min: float = 30.0, f_margin: float = 1.0) -> np.ndarray:
    """num_filters+1 band edges, equally spaced on the mel scale.

    The span is [f_min, nyquist - f_margin]: the low end is clamped to 30 Hz
    and the top sits just under Nyquist so every band is strictly inside
    (0, sample_rate/2).
    """
    if num_filters < 1:
        raise ValueError("need at least one filter")
    nyq = sample_rate / 2.0
    if not 0.0 < f_min < nyq - f_margin:
        raise ValueError(f"f_min {f_min} outside (0, {nyq - f_margin})")
    mels = np.linspace(hz_to_mel(f_min), hz_to_mel(nyq - f_margin), num_filters + 1)
    edges = mel_to_hz(mels)
    edges[0] = f_min  # exact, not through the mel round trip
    return edges


def sinc_kernels(edges: np.ndarray, kernel_len: int, sample_rate: int = 16000) -> np.ndarray:
    """Windowed band-pass kernels, one per adjacent edge pair: (F, kernel_len).

    h[n] = 2 f2 sinc(2 f2 n) - 2 f1 sinc(2 f1 n) (f normalized by the sample
    rate), multiplied by a Hamming window.  Built on the non-negative half of
    the tap grid and mirrored, so even symmetry holds bit-exactly.
    """
    if kernel_len % 2 != 1:
        raise ValueError("kernel_len must be odd (symmetric filters)")
    edges = np.asarray(edges, dtype=np.float64)
    half = kernel_len // 2
    n = np.arange(0, half + 1, dtype=np.float64)  # taps 0..half
    f1 = edges[:-1, None] / sample_rate
    f2 = edges[1:, None] / sample_rate
    right = 2.0 * f2 * np.sinc(2.0 * f2 * n) - 2.0 * f1 * np.sinc(2.0 * f1 * n)
    window = 0.54 + 0.46 * np.cos(2.0 * np.pi * n / (kernel_len - 1))
    right *= window
    kernels = np.empty((edges.size - 1, kernel_len), dtype=np.float64)
    kernels[:, half:] = right
    kernels[:, :half] = right[:, :0:-1]
    return kernels


class SincFilterbank(Module):
    """The filterbank itself: kernels plus the valid-mode convolution.

    trainable=False (default) keeps the kernels as a fixed buffer — backward
    records no gradient for them.  trainable=True promotes the kernel matrix
    to a free Parameter (the band-pass structure is then no longer enforced).
    """

    def __init__(self, num_filters: int = 70, kernel_len: int = 129,
                 sample_rate: int = 16000, f_min: float = 30.0,
                 trainable: bool = False, magnitude: bool = False):
        super().__init__()
        self.num_filters = int(num_filters)
        self.kernel_len = int(kernel_len)
        self.sample_rate = int(sample_rate)
        self.magnitude = bool(magnitude)
        self.trainable = bool(trainable)
        edges = mel_band_edges(num_filters, sample_rate, f_min)
        self.register_buffer("band_edges", edges)
        kernels = sinc_kernels(edges, kernel_len, sample_rate)
        if trainable:
            self.kernels = Parameter(kernels)
        else:
            self._kernels_t = Tensor(kernels.astype(default_dtype()))
            self.register_buffer("kernels", self._kernels_t.data)

    def _kernel_tensor(self) -> Tensor:
        return self.kernels if self.trainable else self._kernels_t

    @property
    def f_low(self) -> np.ndarray:
        return self.band_edges[:-1]

    @property
    def f_high(self) -> np.ndarray:
        return self.band_edges[1:]

    def forward(self, wave: Tensor) -> Tensor:
        """(B, L) -> (B, F, L - kernel_len + 1) raw filter responses."""
        if wave.ndim != 2:
            raise ValueError("filterbank expects a (B, L) waveform batch")
        out = conv1d(wave, self._kernel_tensor())
        if self.magnitude:
            out = out.abs()
        return out


class SincFrontend(Module):
    """Filterbank -> (bin, time) max-pool 3x3 -> dual-bank BN -> SeLU.

    Output is a channels-last feature map (B, F//3, T//3, 1).
    """

    def __init__(self, num_filters: int = 70, kernel_len: int = 129,
                 sample_rate: int = 16000, f_min: float = 30.0,
                 pool=(3, 3), trainable: bool = False, magnitude: bool = False):
        super().__init__()
        self.pool = tuple(pool)
        self.filterbank = SincFilterbank(num_filters, kernel_len, sample_rate,
                                         f_min, trainable, magnitude)
        self.bn = DualBatchNorm(1)

    def forward(self, wave: Tensor) -> Tensor:
        y = self.filterbank(wave)                      # (B, F, T)
        b, f, t = y.shape
        fmap = y.reshape(b, f, t, 1)
        fmap = maxpool2d(fmap, self.pool)
        fmap = self.bn(fmap)
        return fmap.selu()

    def output_hw(self, input_len: int) -> tuple:
        t = input_len - self.filterbank.kernel_len + 1
        if t < 1:
            raise ValueError("input shorter than the filterbank kernel")
        return (self.filterbank.num_filters // self.pool[0], t // self.pool[1])

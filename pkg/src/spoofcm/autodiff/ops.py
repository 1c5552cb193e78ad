"""Structured differentiable ops: convolutions and pooling.

Feature maps are channels-last ``(B, H, W, C)`` throughout — the GEMM that
implements convolution then runs on contiguous blocks, which is what makes
the stack fast enough for whole training runs on a single core.  Waveforms
are ``(B, L)``.

conv2d lowers to im2col + one GEMM per direction; conv1d (long filterbank
kernels over raw audio) goes through rFFT, which is exact to roundoff and
an order of magnitude faster than explicit sliding windows at these sizes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft

from .tensor import Tensor


def _im2col(xp: np.ndarray, kh: int, kw: int):
    """(B, Hp, Wp, C) -> column matrix (B*Ho*Wo, kh*kw*C), plus (B, Ho, Wo)."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (B,Ho,Wo,C,kh,kw)
    win = win.transpose(0, 1, 2, 4, 5, 3)                 # (B,Ho,Wo,kh,kw,C)
    b, ho, wo = win.shape[:3]
    col = np.ascontiguousarray(win).reshape(b * ho * wo, kh * kw * xp.shape[3])
    return col, (b, ho, wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, pad=(0, 0)) -> Tensor:
    """2-D correlation, stride 1.  x (B,H,W,C), w (kh,kw,C,O) -> (B,Ho,Wo,O)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects x (B,H,W,C) and w (kh,kw,C,O)")
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[3]}, weight {cin}")
    ph, pw = pad
    bsz, h, wd, _ = x.shape
    hp, wp = h + 2 * ph, wd + 2 * pw
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d kernel ({kh},{kw}) larger than padded input ({hp},{wp})")

    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    else:
        xp = x.data
    col, (_, ho, wo) = _im2col(xp, kh, kw)
    out = col @ w.data.reshape(kh * kw * cin, cout)
    if b is not None:
        out += b.data
    out = out.reshape(bsz, ho, wo, cout)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if w.requires_grad:
            colw, _ = _im2col(xp, kh, kw)  # rebuilt: cheaper than keeping it live
            w._accumulate((colw.T @ g2).reshape(kh, kw, cin, cout))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
            wr = w.data[::-1, ::-1].transpose(0, 1, 3, 2)  # (kh,kw,O,C)
            colg, _ = _im2col(gp, kh, kw)
            dxp = (colg @ np.ascontiguousarray(wr).reshape(kh * kw * cout, cin))
            dxp = dxp.reshape(bsz, hp, wp, cin)
            dx = dxp[:, ph:ph + h, pw:pw + wd] if (ph or pw) else dxp
            x._accumulate(dx)

    return Tensor._node(out, parents, backward)


def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Valid 1-D correlation of each row with every filter, via rFFT.

    x (B, L), w (F, K) -> (B, F, L-K+1).  Exact to floating-point roundoff;
    both input and filter gradients are computed in the frequency domain too.
    """
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError("conv1d expects x (B, L) and w (F, K)")
    bsz, length = x.shape
    nfilt, klen = w.shape
    if klen > length:
        raise ValueError(f"conv1d kernel ({klen}) longer than signal ({length})")
    lout = length - klen + 1
    nfft = sfft.next_fast_len(length)

    xhat = sfft.rfft(x.data, nfft)                  # (B, nf)
    what = sfft.rfft(w.data, nfft)                  # (F, nf)
    y = sfft.irfft(xhat[:, None, :] * np.conj(what)[None], nfft)[:, :, :lout]
    y = np.ascontiguousarray(y)

    def backward(g):
        ghat = sfft.rfft(g, nfft)                   # (B, F, nf)
        if x.requires_grad:
            # full convolution g * h summed over filters
            acc = np.einsum("bfn,fn->bn", ghat, what)
            x._accumulate(sfft.irfft(acc, nfft)[:, :length])
        if w.requires_grad:
            acc = np.einsum("bn,bfn->fn", xhat, np.conj(ghat))
            w._accumulate(sfft.irfft(acc, nfft)[:, :klen])

    return Tensor._node(y, (x, w), backward)


def maxpool2d(x: Tensor, pool) -> Tensor:
    """Non-overlapping max pool (kh, kw); trailing remainder rows/cols dropped.

    Ties inside a window route the gradient to the first maximum in row-major
    window order.
    """
    kh, kw = pool
    if x.ndim != 4:
        raise ValueError("maxpool2d expects (B, H, W, C)")
    bsz, h, wd, c = x.shape
    ho, wo = h // kh, wd // kw
    if ho == 0 or wo == 0:
        raise ValueError(f"maxpool2d ({kh},{kw}) larger than input ({h},{wd})")
    v = x.data[:, :ho * kh, :wo * kw, :].reshape(bsz, ho, kh, wo, kw, c)
    m1 = v.max(axis=4)            # (B,Ho,kh,Wo,C)
    out = m1.max(axis=2)          # (B,Ho,Wo,C)

    def backward(g):
        i1 = v.argmax(axis=4)                                    # (B,Ho,kh,Wo,C)
        i2 = m1.argmax(axis=2)                                   # (B,Ho,Wo,C)
        iw = np.take_along_axis(i1, i2[:, :, None], axis=2)[:, :, 0]
        buf6 = np.zeros_like(v)
        bb, ss, tt, cc = np.ogrid[0:bsz, 0:ho, 0:wo, 0:c]
        buf6[bb, ss, i2, tt, iw, cc] = g
        buf = np.zeros_like(x.data)
        buf[:, :ho * kh, :wo * kw, :] = buf6.reshape(bsz, ho * kh, wo * kw, c)
        x._accumulate(buf)

    return Tensor._node(out, (x,), backward)


def _adaptive_bins(n_in: int, n_out: int):
    starts = (np.arange(n_out) * n_in) // n_out
    ends = -(-(np.arange(1, n_out + 1) * n_in) // n_out)  # ceil division
    return starts, ends


def adaptive_avg_pool2d(x: Tensor, out_hw) -> Tensor:
    """Average pool to a fixed output grid; None keeps that axis unchanged."""
    if x.ndim != 4:
        raise ValueError("adaptive_avg_pool2d expects (B, H, W, C)")
    bsz, h, wd, c = x.shape
    oh = h if out_hw[0] is None else int(out_hw[0])
    ow = wd if out_hw[1] is None else int(out_hw[1])
    if oh < 1 or ow < 1 or oh > h or ow > wd:
        raise ValueError(f"adaptive_avg_pool2d: bad output grid ({oh},{ow}) for ({h},{wd})")
    hs, he = _adaptive_bins(h, oh)
    ws, we = _adaptive_bins(wd, ow)

    out = np.empty((bsz, oh, ow, c), dtype=x.dtype)
    for i in range(oh):
        row = x.data[:, hs[i]:he[i]]
        for j in range(ow):
            out[:, i, j] = row[:, :, ws[j]:we[j]].mean(axis=(1, 2))

    def backward(g):
        buf = np.zeros_like(x.data)
        for i in range(oh):
            for j in range(ow):
                cnt = (he[i] - hs[i]) * (we[j] - ws[j])
                buf[:, hs[i]:he[i], ws[j]:we[j]] += g[:, i:i + 1, j:j + 1] / cnt
        x._accumulate(buf)

    return Tensor._node(out, (x,), backward)

"""Finite-difference gradient checking.

Central differences against the analytic backward pass, reported as
``max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`` over all
elements of all checked inputs.  Cases whose sampled inputs sit within
``kink_tol`` of a non-differentiable point (ties in a max window, a relu /
clamp boundary) are resampled, at most ``max_attempts`` times, after which
the op is reported as stuck at a kink.

Run in float64: the harness refuses float32 inputs, where truncation error
would drown the comparison.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import (
    Tensor,
    concat,
    index_select,
    log_softmax,
    normalize,
    softplus,
    take_rows,
)

DEFAULT_EPS = 1e-5
KINK_TOL = 1e-3


class KinkError(RuntimeError):
    """Sampling kept landing on a non-differentiable point."""


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(f, x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def check_fn(make_loss, inputs, eps: float = DEFAULT_EPS) -> float:
    """Check d(make_loss)/d(input_i) for every input array.

    ``make_loss`` maps len(inputs) Tensors to a scalar Tensor and must be
    deterministic and side-effect free.
    """
    inputs = [np.asarray(x) for x in inputs]
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError("gradient checks run in float64 only")
    ts = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    loss = make_loss(*ts)
    if loss.size != 1:
        raise ValueError("make_loss must return a scalar")
    loss.backward()

    worst = 0.0
    for k in range(len(inputs)):
        def fk(xk, k=k):
            args = [Tensor(inputs[j]) if j != k else Tensor(xk.copy())
                    for j in range(len(inputs))]
            return float(make_loss(*args).data)

        num = numeric_grad(fk, inputs[k], eps)
        ana = ts[k].grad if ts[k].grad is not None else np.zeros_like(inputs[k])
        worst = max(worst, max_rel_err(ana, num))
    return worst


def check_params(make_loss, params, eps: float = DEFAULT_EPS) -> float:
    """Check gradients w.r.t. live Parameters of a module-based loss.

    ``make_loss()`` takes no arguments; parameter tensors are perturbed in
    place for the numeric side.  Any running-statistics updates must be
    disabled by the caller first.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradient checks run in float64 only")
        p.grad = None
    loss = make_loss()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(make_loss().data)
            flat[i] = orig - eps
            fm = float(make_loss().data)
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * eps)
        worst = max(worst, max_rel_err(ana, num.reshape(p.data.shape)))
    return worst


def directional_check(make_loss, leaves, rng: np.random.Generator,
                      eps: float = 1e-6) -> float:
    """Directional-derivative check for big graphs (one random direction).

    Compares <grad, d> with a central difference along d over all leaves at
    once; O(2 forwards) instead of O(2 * n_elements).
    """
    for p in leaves:
        if p.data.dtype != np.float64:
            raise TypeError("gradient checks run in float64 only")
        p.grad = None
    loss = make_loss()
    loss.backward()
    dirs = [rng.normal(size=p.data.shape) for p in leaves]
    analytic = sum(
        float(np.sum((p.grad if p.grad is not None else 0.0) * d))
        for p, d in zip(leaves, dirs))
    for p, d in zip(leaves, dirs):
        p.data += eps * d
    fp = float(make_loss().data)
    for p, d in zip(leaves, dirs):
        p.data -= 2.0 * eps * d
    fm = float(make_loss().data)
    for p, d in zip(leaves, dirs):
        p.data += eps * d
    numeric = (fp - fm) / (2.0 * eps)
    return max_rel_err(np.asarray(analytic), np.asarray(numeric))


# ---------------------------------------------------------------------------
# op registry: op kind -> sampler(rng) -> (make_loss, inputs, near_kink|None)
# ---------------------------------------------------------------------------


def _proj(rng, shape):
    arr = rng.normal(size=shape)
    return lambda t: (t * Tensor(arr)).sum()


def _windows_gap(x, kh, kw):
    b, h, w, c = x.shape
    ho, wo = h // kh, w // kw
    v = x[:, :ho * kh, :wo * kw, :].reshape(b, ho, kh, wo, kw, c)
    v = v.transpose(0, 1, 3, 5, 2, 4).reshape(b, ho, wo, c, kh * kw)
    s = np.sort(v, axis=-1)
    return float(np.min(s[..., -1] - s[..., -2])) if kh * kw > 1 else np.inf


def _sample_add(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    p = _proj(rng, (3, 4))
    return (lambda x, y: p(x + y)), [a, b], None


def _sample_mul(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 1))
    p = _proj(rng, (3, 4))
    return (lambda x, y: p(x * y)), [a, b], None


def _sample_div(rng):
    a = rng.normal(size=(3, 4))
    b = rng.uniform(0.5, 2.0, size=(3, 4)) * np.where(rng.random((3, 4)) < 0.5, -1, 1)
    p = _proj(rng, (3, 4))
    return (lambda x, y: p(x / y)), [a, b], None


def _sample_pow(rng):
    a = rng.uniform(0.3, 2.5, size=(3, 4))
    n = float(rng.uniform(-2.0, 3.0))
    p = _proj(rng, (3, 4))
    return (lambda x: p(x ** n)), [a], None


def _sample_matmul(rng):
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    p = _proj(rng, (4, 5))
    return (lambda x, y: p(x @ y)), [a, b], None


def _smooth_unary(fn, lo=-2.0, hi=2.0):
    def sample(rng):
        a = rng.uniform(lo, hi, size=(3, 5))
        p = _proj(rng, (3, 5))
        return (lambda x: p(fn(x))), [a], None
    return sample


def _kinked_unary(fn):
    def sample(rng):
        a = rng.uniform(-2.0, 2.0, size=(3, 5))
        p = _proj(rng, (3, 5))
        near = lambda xs: float(np.min(np.abs(xs[0]))) < KINK_TOL
        return (lambda x: p(fn(x))), [a], near
    return sample


def _sample_clamp(rng):
    a = rng.uniform(-2.0, 2.0, size=(4, 4))
    p = _proj(rng, (4, 4))
    near = lambda xs: bool(np.any(np.abs(xs[0] + 0.5) < KINK_TOL)
                           or np.any(np.abs(xs[0] - 0.7) < KINK_TOL))
    return (lambda x: p(x.clamp(-0.5, 0.7))), [a], near


def _sample_sum(rng):
    a = rng.normal(size=(2, 3, 4))
    p = _proj(rng, (2, 4))
    return (lambda x: p(x.sum(axis=1))), [a], None


def _sample_mean(rng):
    a = rng.normal(size=(2, 3, 4))
    p = _proj(rng, (1, 3, 1))
    return (lambda x: p(x.mean(axis=(0, 2), keepdims=True))), [a], None


def _sample_max_axis(rng):
    a = rng.normal(size=(3, 6))
    p = _proj(rng, (3,))
    def near(xs):
        s = np.sort(xs[0], axis=1)
        return float(np.min(s[:, -1] - s[:, -2])) < KINK_TOL
    return (lambda x: p(x.max(axis=1))), [a], near


def _sample_max_global(rng):
    a = rng.normal(size=(4, 5))
    def near(xs):
        s = np.sort(xs[0].reshape(-1))
        return float(s[-1] - s[-2]) < KINK_TOL
    return (lambda x: x.max()), [a], near


def _sample_reshape(rng):
    a = rng.normal(size=(2, 6))
    p = _proj(rng, (3, 4))
    return (lambda x: p(x.reshape(3, 4))), [a], None


def _sample_transpose(rng):
    a = rng.normal(size=(2, 3, 4))
    p = _proj(rng, (4, 2, 3))
    return (lambda x: p(x.transpose(2, 0, 1))), [a], None


def _sample_getitem(rng):
    a = rng.normal(size=(4, 6))
    p = _proj(rng, (2, 3))
    return (lambda x: p(x[1:3, ::2])), [a], None


def _sample_concat(rng):
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 2))
    p = _proj(rng, (2, 5))
    return (lambda x, y: p(concat([x, y], axis=1))), [a, b], None


def _sample_take_rows(rng):
    a = rng.normal(size=(5, 3))
    idx = rng.integers(0, 3, size=5)
    p = _proj(rng, (5,))
    return (lambda x: p(take_rows(x, idx))), [a], None


def _sample_index_select(rng):
    a = rng.normal(size=(4, 3))
    # deliberately repeat a row index: gradient must accumulate, not overwrite
    idx = np.array([2, 0, 2, 1, 3])
    p = _proj(rng, (5, 3))
    return (lambda x: p(index_select(x, idx))), [a], None


def _sample_log_softmax(rng):
    a = rng.normal(size=(4, 5)) * 3.0
    p = _proj(rng, (4, 5))
    return (lambda x: p(log_softmax(x, axis=-1))), [a], None


def _sample_softplus(rng):
    a = rng.uniform(-4.0, 4.0, size=(3, 5))
    p = _proj(rng, (3, 5))
    near = lambda xs: float(np.min(np.abs(xs[0]))) < KINK_TOL
    return (lambda x: p(softplus(x))), [a], near


def _sample_normalize(rng):
    a = rng.normal(size=(4, 6))
    a += np.sign(a.sum(axis=1, keepdims=True)) * 0.2  # keep norms well away from 0
    p = _proj(rng, (4, 6))
    return (lambda x: p(normalize(x, axis=1))), [a], None


def _sample_sigmoid_composite(rng):
    a = rng.uniform(-3.0, 3.0, size=(3, 4))
    p = _proj(rng, (3, 4))
    return (lambda x: p(x.sigmoid())), [a], None


def _sample_conv1d(rng):
    bsz = int(rng.integers(1, 3))
    length = int(rng.integers(12, 24))
    klen = int(rng.integers(3, 8))
    nf = int(rng.integers(1, 4))
    x = rng.normal(size=(bsz, length))
    w = rng.normal(size=(nf, klen))
    p = _proj(rng, (bsz, nf, length - klen + 1))
    return (lambda xt, wt: p(ops.conv1d(xt, wt))), [x, w], None


def _sample_conv2d(rng):
    bsz = int(rng.integers(1, 3))
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 4))
    kh, kw = 2, 3  # the production kernel
    pad = [(0, 0), (1, 1), (0, 1), (1, 0)][int(rng.integers(0, 4))]
    h = int(rng.integers(kh + 1, kh + 4))
    w = int(rng.integers(kw + 1, kw + 5))
    x = rng.normal(size=(bsz, h, w, cin))
    wt = rng.normal(size=(kh, kw, cin, cout))
    b = rng.normal(size=(cout,))
    ho = h + 2 * pad[0] - kh + 1
    wo = w + 2 * pad[1] - kw + 1
    p = _proj(rng, (bsz, ho, wo, cout))
    return (lambda xt, wtt, bt: p(ops.conv2d(xt, wtt, bt, pad=pad))), [x, wt, b], None


def _sample_maxpool(rng):
    kh, kw = [(1, 3), (3, 3), (2, 2)][int(rng.integers(0, 3))]
    bsz = int(rng.integers(1, 3))
    c = int(rng.integers(1, 3))
    h = kh * int(rng.integers(1, 3)) + int(rng.integers(0, kh))
    w = kw * int(rng.integers(1, 3)) + int(rng.integers(0, kw))
    x = rng.normal(size=(bsz, h, w, c))
    p = _proj(rng, (bsz, h // kh, w // kw, c))
    near = lambda xs: _windows_gap(xs[0], kh, kw) < KINK_TOL
    return (lambda xt: p(ops.maxpool2d(xt, (kh, kw)))), [x], near


def _sample_adaptive_pool(rng):
    bsz = int(rng.integers(1, 3))
    c = int(rng.integers(1, 3))
    h = int(rng.integers(3, 7))
    w = int(rng.integers(3, 9))
    oh = int(rng.integers(1, h + 1))
    ow = int(rng.integers(1, w + 1))
    x = rng.normal(size=(bsz, h, w, c))
    p = _proj(rng, (bsz, oh, ow, c))
    return (lambda xt: p(ops.adaptive_avg_pool2d(xt, (oh, ow)))), [x], None


OP_CASES = {
    "add": _sample_add,
    "mul": _sample_mul,
    "div": _sample_div,
    "pow": _sample_pow,
    "matmul": _sample_matmul,
    "exp": _smooth_unary(lambda t: t.exp()),
    "log": _smooth_unary(lambda t: t.log(), 0.2, 3.0),
    "sqrt": _smooth_unary(lambda t: t.sqrt(), 0.2, 3.0),
    "tanh": _smooth_unary(lambda t: t.tanh(), -3.0, 3.0),
    "sigmoid": _sample_sigmoid_composite,
    "relu": _kinked_unary(lambda t: t.relu()),
    "selu": _kinked_unary(lambda t: t.selu()),
    "abs": _kinked_unary(lambda t: t.abs()),
    "clamp": _sample_clamp,
    "sum": _sample_sum,
    "mean": _sample_mean,
    "max_axis": _sample_max_axis,
    "max_global": _sample_max_global,
    "reshape": _sample_reshape,
    "transpose": _sample_transpose,
    "getitem": _sample_getitem,
    "concat": _sample_concat,
    "take_rows": _sample_take_rows,
    "index_select": _sample_index_select,
    "log_softmax": _sample_log_softmax,
    "softplus": _sample_softplus,
    "normalize": _sample_normalize,
    "conv1d": _sample_conv1d,
    "conv2d": _sample_conv2d,
    "maxpool2d": _sample_maxpool,
    "adaptive_avg_pool2d": _sample_adaptive_pool,
}

ALL_OPS = tuple(OP_CASES)


def check_op(op_kind: str, rng: np.random.Generator | None = None,
             eps: float = DEFAULT_EPS, max_attempts: int = 10) -> float:
    """Sample one random case for op_kind and gradient-check it.

    Resamples (up to max_attempts) while the drawn inputs sit near a kink.
    """
    if op_kind not in OP_CASES:
        raise KeyError(f"unknown op kind {op_kind!r}; known: {sorted(OP_CASES)}")
    rng = np.random.default_rng() if rng is None else rng
    sampler = OP_CASES[op_kind]
    for _ in range(max_attempts):
        make_loss, inputs, near_kink = sampler(rng)
        if near_kink is not None and near_kink(inputs):
            continue
        return check_fn(make_loss, inputs, eps)
    raise KinkError(f"{op_kind}: inputs landed near a kink {max_attempts} times in a row")

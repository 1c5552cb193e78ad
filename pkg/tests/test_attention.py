"""Attention blocks: SE against a direct-formula oracle, CBAM against a
loop-built replica, SimAM against numeric minimization of its per-neuron
energy."""

import numpy as np
import pytest

from spoofcm.attention import (
    CBAMAttention,
    SEAttention,
    SimAMAttention,
    make_attention,
    simam_energy,
)
from spoofcm.autodiff import Tensor, check_fn, check_params


def np_sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------- SimAM


def loo_closed_form(flat, t_idx, lam):
    """Minimal energy with leave-one-out statistics (the exact minimizer)."""
    others = np.delete(flat, t_idx)
    mu = others.mean()
    var = ((others - mu) ** 2).mean()
    t = flat[t_idx]
    return 4.0 * (var + lam) / ((t - mu) ** 2 + 2.0 * var + 2.0 * lam)


def numeric_min_energy(flat, t_idx, lam):
    """Numerically minimize the regularized per-neuron energy over (w, b).

    The energy is mean over the other neurons of (-1 - (w x_i + b))^2, plus
    (1 - (w t + b))^2, plus lam w^2 — an ordinary least-squares problem, so an
    SVD solve finds the minimum without touching the closed form.
    """
    others = np.delete(flat, t_idx)
    m1 = others.size
    t = flat[t_idx]
    rows = [np.stack([others, np.ones(m1)], axis=1) / np.sqrt(m1),
            np.array([[t, 1.0]]),
            np.array([[np.sqrt(lam), 0.0]])]
    targets = np.concatenate([-np.ones(m1) / np.sqrt(m1), [1.0], [0.0]])
    A = np.concatenate(rows, axis=0)
    sol, *_ = np.linalg.lstsq(A, targets, rcond=None)
    r = A @ sol - targets
    return float(r @ r)


def test_simam_closed_form_matches_numeric_minimum(rng):
    lam = 1e-4
    worst = 0.0
    for _ in range(50):
        flat = rng.normal(size=16)
        for t_idx in range(16):
            cf = loo_closed_form(flat, t_idx, lam)
            num = numeric_min_energy(flat, t_idx, lam)
            worst = max(worst, abs(cf - num))
    assert worst < 1e-6, worst


def test_simam_module_uses_shared_statistics(rng):
    """The module's vectorized energies equal the per-map oracle (all-M
    statistics shared across the channel, as the practical form specifies)."""
    lam = 1e-4
    att = SimAMAttention(lam)
    x = rng.normal(size=(2, 4, 5, 3))
    out = att(Tensor(x)).data
    for b in range(2):
        for c in range(3):
            e = simam_energy(x[b, :, :, c], lam)
            assert np.allclose(out[b, :, :, c],
                               np_sigmoid(1.0 / e) * x[b, :, :, c], atol=1e-12)


def test_simam_no_parameters_and_validation(rng):
    att = SimAMAttention()
    assert list(att.parameters()) == []
    with pytest.raises(ValueError):
        SimAMAttention(0.0)
    with pytest.raises(ValueError):
        att(Tensor(np.zeros((1, 1, 1, 2))))  # S*T < 2


def test_simam_gradcheck(rng):
    att = SimAMAttention(1e-2)
    x = rng.normal(size=(2, 3, 3, 2))
    err = check_fn(lambda t: att(t).sum(), [x])
    assert err < 1e-4


# ---------------------------------------------------------------- SE


def test_se_matches_direct_formula(rng):
    se = SEAttention(8, rng, reduction=4)
    x = rng.normal(size=(3, 4, 5, 8))
    out = se(Tensor(x)).data

    e = x.mean(axis=(1, 2))
    h = np.maximum(e @ se.fc1.weight.data + se.fc1.bias.data, 0.0)
    s = np_sigmoid(h @ se.fc2.weight.data + se.fc2.bias.data)
    assert np.allclose(out, x * s[:, None, None, :], atol=1e-12)


def test_se_shapes_and_validation(rng):
    with pytest.raises(ValueError):
        SEAttention(4, rng, reduction=8)
    with pytest.raises(ValueError):
        SEAttention(12, rng, reduction=8)
    se = SEAttention(8, rng)
    assert se.fc1.weight.shape == (8, 1)
    assert se.fc2.weight.shape == (1, 8)
    x = rng.normal(size=(2, 3, 4, 8))
    assert se(Tensor(x)).shape == (2, 3, 4, 8)


def test_se_gradcheck(rng):
    se = SEAttention(4, rng, reduction=2)
    x = rng.normal(size=(2, 3, 3, 4))
    err = check_fn(lambda t: (se(t) ** 2).sum(), [x])
    assert err < 1e-4
    err_p = check_params(lambda: (se(Tensor(x)) ** 2).sum(),
                         list(se.parameters()))
    assert err_p < 1e-4


# ---------------------------------------------------------------- CBAM


def np_conv2d_same(x, w, b):
    """Channels-last (S,T,Cin) 'same' conv with a (k,k,Cin,Cout) kernel."""
    s, t, cin = x.shape
    k = w.shape[0]
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((s, t, w.shape[3]))
    for i in range(s):
        for j in range(t):
            patch = xp[i:i + k, j:j + k, :]
            out[i, j, :] = np.tensordot(patch, w, axes=([0, 1, 2], [0, 1, 2])) + b
    return out


def test_cbam_matches_loop_replica(rng):
    cb = CBAMAttention(8, rng, reduction=4)
    x = rng.normal(size=(2, 5, 6, 8))
    out = cb(Tensor(x)).data

    def mlp(v):
        h = np.maximum(v @ cb.fc1.weight.data + cb.fc1.bias.data, 0.0)
        return h @ cb.fc2.weight.data + cb.fc2.bias.data

    avg = x.mean(axis=(1, 2))
    mx = x.max(axis=(1, 2))
    gate_c = np_sigmoid(mlp(avg) + mlp(mx))
    x1 = x * gate_c[:, None, None, :]

    ref = np.empty_like(out)
    for bi in range(2):
        desc = np.stack([x1[bi].mean(axis=2), x1[bi].max(axis=2)], axis=2)
        gate_ft = np_sigmoid(np_conv2d_same(desc, cb.spatial_w.data,
                                            cb.spatial_b.data))
        ref[bi] = x1[bi] * gate_ft
    assert np.allclose(out, ref, atol=1e-12)


def test_cbam_validation(rng):
    with pytest.raises(ValueError):
        CBAMAttention(4, rng, reduction=8)
    with pytest.raises(ValueError):
        CBAMAttention(8, rng, reduction=4, spatial_kernel=6)


def test_cbam_gradcheck(rng):
    cb = CBAMAttention(4, rng, reduction=2, spatial_kernel=3)
    x = rng.normal(size=(2, 3, 4, 4))
    err = check_fn(lambda t: (cb(t) ** 2).sum(), [x])
    assert err < 1e-4


# ---------------------------------------------------------------- factory


def test_make_attention_dispatch(rng):
    assert make_attention("none", 8, rng) is None
    assert isinstance(make_attention("se", 8, rng), SEAttention)
    assert isinstance(make_attention("cbam", 8, rng), CBAMAttention)
    assert isinstance(make_attention("simam", 8, rng), SimAMAttention)
    with pytest.raises(ValueError):
        make_attention("eca", 8, rng)

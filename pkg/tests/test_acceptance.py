"""Acceptance gate: ten go/no-go checks, one test per criterion.

Criteria 1-8 are property checks with pinned tolerances and independent
oracles written in this file.  Criterion 9 runs the real desk-scale
experiment off configs/desk.cfg (corpus generation, full training, three
ablations) and criterion 10 repeats the whole of criterion 9 from scratch
and compares the produced files byte for byte — together they dominate the
suite's wall time (tens of minutes).
"""

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from spoofcm.adversary import AttackConfig, pgd_attack
from spoofcm.attention import simam_energy_exact
from spoofcm.autodiff import (
    ALL_OPS,
    DualBatchNorm,
    KinkError,
    Module,
    Parameter,
    Tensor,
    bn_fingerprint,
    check_fn,
    check_op,
    no_grad,
    set_default_dtype,
)
from spoofcm.config import load_config
from spoofcm.data import gen_synthetic_corpus, parse_protocol
from spoofcm.encoder import EncoderConfig, SpoofEncoder
from spoofcm.losses import (
    MarginConfig,
    fuse,
    margin_softmax,
    relation_mse,
    total_objective,
    weighted_ce,
)
from spoofcm.meta import BONAFIDE_KEY, pair_labels, sample_episode
from spoofcm.metrics import (
    ScoreSet,
    TdcfCostModel,
    compute_eer,
    compute_min_tdcf,
)
from spoofcm.runner import LOSS_CSV_HEADER, evaluate_run, train_single

DESK_CFG = Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"


# ===================================================================
# criterion 1 — gradient suite: every op and every loss against
# central finite differences, 64-bit, 100 random cases each, < 5 min
# ===================================================================

# ops the suite must not silently lose if the registry is edited
ESSENTIAL_OPS = {
    "add", "mul", "matmul", "exp", "log", "sqrt", "tanh", "sigmoid",
    "relu", "selu", "softplus", "log_softmax", "normalize", "sum", "mean",
    "conv1d", "conv2d", "maxpool2d", "adaptive_avg_pool2d", "concat",
}


def _margin_case(rng, variant):
    n, d = int(rng.integers(3, 8)), int(rng.integers(3, 7))
    emb = rng.normal(size=(n, d))
    vec = rng.normal(size=(d, 2))
    labels = rng.integers(0, 2, size=n)
    if variant == "nsl":
        m0 = m1 = 0.0
    elif variant == "am":
        m0 = m1 = float(rng.uniform(0.0, 0.8))
    elif variant == "aam":
        m0 = m1 = float(rng.uniform(0.0, 1.2))
    else:
        m0, m1 = float(rng.uniform(0.0, 1.2)), float(rng.uniform(0.0, 1.2))
    if variant == "waam":
        w0, w1 = float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.2, 2.0))
    else:
        w0, w1 = 1.0, 1.0
    # keep the logit scale low: a well-separated sample's gradient decays
    # like exp(-2s), and below ~1e-8 the finite-difference noise floor
    # dominates the relative error, not the backward pass under test
    cfg = MarginConfig(variant, float(rng.uniform(2.0, 6.0)), m0, m1, w0, w1)
    return (lambda e, v: margin_softmax(e, labels, v, cfg)), [emb, vec]


def _ce_case(rng):
    n = int(rng.integers(3, 10))
    logits = rng.normal(size=(n, 2))
    labels = rng.integers(0, 2, size=n)
    w = (float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.2, 2.0)))
    return (lambda lg: weighted_ce(lg, labels, w)), [logits]


def _relation_case(rng):
    ns, nq = int(rng.integers(2, 9)), int(rng.integers(2, 7))
    scores = rng.normal(size=(ns, nq))
    match = rng.integers(0, 2, size=(ns, nq))
    return (lambda s: relation_mse(s, match)), [scores]


def _total_case(rng):
    """Full training objective: fused clean losses plus adversarial term."""
    n, d = 5, 4
    emb = rng.normal(size=(n, d))
    emb_adv = rng.normal(size=(n, d))
    vec = rng.normal(size=(d, 2))
    labels = rng.integers(0, 2, size=n)
    scores = rng.normal(size=(4, 3))
    match = rng.integers(0, 2, size=(4, 3))
    lam = float(rng.uniform(0.0, 1.0))
    cfg = MarginConfig(scale=4.0)

    def fn(e, v, s, ea):
        l_w = margin_softmax(e, labels, v, cfg)
        l_m = relation_mse(s, match)
        l_adv = margin_softmax(ea, labels, v, cfg)
        return total_objective(fuse(l_w, l_m, lam), l_adv)

    return fn, [emb, vec, scores, emb_adv]


LOSS_CASES = [
    ("nsl", lambda rng: _margin_case(rng, "nsl")),
    ("am", lambda rng: _margin_case(rng, "am")),
    ("aam", lambda rng: _margin_case(rng, "aam")),
    ("waam", lambda rng: _margin_case(rng, "waam")),
    ("weighted_ce", _ce_case),
    ("relation_mse", _relation_case),
    ("total_objective", _total_case),
]

CASES_PER_ITEM = 100


def test_criterion_01_gradient_suite(rng):
    t0 = time.time()
    assert ESSENTIAL_OPS <= set(ALL_OPS), sorted(ESSENTIAL_OPS - set(ALL_OPS))

    worst_by_item = {}
    for op in ALL_OPS:
        worst, done, attempts = 0.0, 0, 0
        while done < CASES_PER_ITEM:
            attempts += 1
            assert attempts < 10 * CASES_PER_ITEM, f"{op}: kink resampling stuck"
            try:
                worst = max(worst, check_op(op, rng=rng))
            except KinkError:
                continue
            done += 1
        assert worst < 1e-4, (op, worst)
        worst_by_item[op] = worst

    for name, builder in LOSS_CASES:
        worst = 0.0
        for _ in range(CASES_PER_ITEM):
            fn, inputs = builder(rng)
            worst = max(worst, check_fn(fn, inputs))
        assert worst < 1e-4, (name, worst)
        worst_by_item[name] = worst

    elapsed = time.time() - t0
    assert elapsed < 300.0, f"gradient suite too slow: {elapsed:.1f}s"
    print(f"criterion 1: {len(ALL_OPS)} ops + {len(LOSS_CASES)} losses x "
          f"{CASES_PER_ITEM} cases, worst rel err "
          f"{max(worst_by_item.values()):.3g}, {elapsed:.1f}s")


# ===================================================================
# criterion 2 — default configuration reproduces the documented
# shape chain (1,23,21490) -> (32,23,2387) -> (64,23,29)
# -> (64,1,29) -> 64 -> 2 in a real forward pass
# ===================================================================


def test_criterion_02_default_config_shape_chain():
    enc_cfg = load_config([], {}).encoder_config()
    # the full-length forward is memory-hungry; 32-bit is plenty for shapes
    set_default_dtype(np.float32)
    try:
        enc = SpoofEncoder(enc_cfg, np.random.default_rng(0))
        with no_grad():
            observed = dict(enc.observed_shapes(batch=1))
    finally:
        set_default_dtype(np.float64)

    assert observed["frontend"] == (1, 23, 21490)
    assert observed["block2"] == (32, 23, 2387)
    assert observed["block6"] == (64, 23, 29)
    assert observed["pooled"] == (64, 1, 29)
    assert observed["embedding"] == (64,)
    assert observed["logits"] == (2,)
    # and the whole stack agrees with the shape arithmetic, stage by stage
    predicted = dict(enc_cfg.layer_shapes())
    for name, shape in observed.items():
        assert predicted[name] == shape, name
    print(f"criterion 2: forward chain {observed}")


# ===================================================================
# criterion 3 — the SimAM closed-form energy minimum agrees with a
# numeric minimization of the per-neuron energy, 50 random 1x4x4 maps
# ===================================================================


def _simam_energy_at(flat, t_idx, w, b, lam):
    others = np.delete(flat, t_idx)
    fit = ((-1.0 - (w * others + b)) ** 2).mean()
    return float(fit + (1.0 - (w * flat[t_idx] + b)) ** 2 + lam * w * w)


def _numeric_min_energy(flat, t_idx, lam):
    """Minimize the energy as a plain least-squares problem via SVD."""
    others = np.delete(flat, t_idx)
    m1 = others.size
    design = np.vstack([
        np.stack([others, np.ones(m1)], axis=1) / np.sqrt(m1),
        [[flat[t_idx], 1.0]],
        [[np.sqrt(lam), 0.0]],
    ])
    target = np.concatenate([-np.ones(m1) / np.sqrt(m1), [1.0], [0.0]])
    (w, b), *_ = np.linalg.lstsq(design, target, rcond=None)
    return _simam_energy_at(flat, t_idx, w, b, lam), float(w), float(b)


def test_criterion_03_simam_closed_form(rng):
    worst = 0.0
    for _ in range(50):
        fmap = rng.normal(size=(1, 4, 4))
        lam = float(10.0 ** rng.uniform(-5.0, -2.0))
        closed = simam_energy_exact(fmap[0], lam).ravel()
        flat = fmap.ravel()
        for t_idx in range(flat.size):
            e_num, w, b = _numeric_min_energy(flat, t_idx, lam)
            worst = max(worst, abs(closed[t_idx] - e_num))
            # the numeric solution really is a minimum
            for _ in range(4):
                dw, db = rng.normal(size=2) * 1e-3
                assert _simam_energy_at(flat, t_idx, w + dw, b + db, lam) \
                    >= e_num - 1e-12
    assert worst < 1e-6, worst
    print(f"criterion 3: worst |closed form - numeric min| {worst:.3g}")


# ===================================================================
# criterion 4 — loss-family reductions: zero margin and unit weights
# collapse am/aam/waam to scaled NSL; waam with equal margins and
# unit weights is aam
# ===================================================================


def test_criterion_04_margin_family_reductions(rng):
    worst_nsl, worst_pair = 0.0, 0.0
    for _ in range(100):
        n, d = int(rng.integers(3, 9)), int(rng.integers(3, 7))
        emb = Tensor(rng.normal(size=(n, d)))
        vec = Tensor(rng.normal(size=(d, 2)))
        labels = rng.integers(0, 2, size=n)
        s = float(rng.uniform(2.0, 48.0))

        ref = float(margin_softmax(
            emb, labels, vec, MarginConfig("nsl", s, 0.0, 0.0, 1.0, 1.0)).data)
        for variant in ("am", "aam", "waam"):
            val = float(margin_softmax(
                emb, labels, vec, MarginConfig(variant, s, 0.0, 0.0, 1.0, 1.0)).data)
            worst_nsl = max(worst_nsl, abs(val - ref))

        m = float(rng.uniform(0.0, 1.2))
        aam = float(margin_softmax(
            emb, labels, vec, MarginConfig("aam", s, m, m, 1.0, 1.0)).data)
        waam = float(margin_softmax(
            emb, labels, vec, MarginConfig("waam", s, m, m, 1.0, 1.0)).data)
        worst_pair = max(worst_pair, abs(aam - waam))

    assert worst_nsl < 1e-10, worst_nsl
    assert worst_pair < 1e-12, worst_pair
    print(f"criterion 4: m=0,w=1 gap {worst_nsl:.3g}; waam/aam gap {worst_pair:.3g}")


# ===================================================================
# criterion 5 — EER and min t-DCF against an independent brute-force
# sweep on 100 random 1,000-trial score sets; EER invariant under
# monotone transforms
# ===================================================================


def _brute_rates(bona, spoof):
    """FAR/FRR by explicit comparison counting at every candidate threshold."""
    grid = np.append(np.unique(np.concatenate([bona, spoof])), np.inf)
    far = (spoof[None, :] >= grid[:, None]).sum(axis=1) / spoof.size
    frr = (bona[None, :] < grid[:, None]).sum(axis=1) / bona.size
    return grid, far, frr


def _brute_eer(bona, spoof):
    grid, far, frr = _brute_rates(bona, spoof)
    diff = far - frr
    i = int(np.nonzero(diff <= 0.0)[0][0])
    if diff[i] == 0.0:
        return 0.5 * (far[i] + frr[i]), grid[i]
    t = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = far[i - 1] + t * (far[i] - far[i - 1])
    thr = grid[i - 1] if np.isinf(grid[i]) else grid[i - 1] + t * (grid[i] - grid[i - 1])
    return eer, thr


def _brute_min_tdcf(bona, spoof, cm):
    c1 = cm.pi_tar * (cm.c_miss_cm - cm.c_miss_asv * cm.p_miss_asv) \
        - cm.pi_non * cm.c_fa_asv * cm.p_fa_asv
    c2 = cm.c_fa_cm * cm.pi_spoof * (1.0 - cm.p_miss_spoof_asv)
    grid, far, frr = _brute_rates(bona, spoof)
    costs = (c1 * frr + c2 * far) / min(c1, c2)
    i = int(np.argmin(costs))
    return costs[i], grid[i]


def _random_score_set(rng):
    n_bona = int(rng.integers(200, 801))
    n_spoof = 1000 - n_bona
    family = int(rng.integers(0, 4))
    if family == 0:      # well separated
        bona = rng.normal(2.0, 0.7, n_bona)
        spoof = rng.normal(-2.0, 0.7, n_spoof)
    elif family == 1:    # heavily overlapping
        bona = rng.normal(0.2, 1.0, n_bona)
        spoof = rng.normal(-0.2, 1.0, n_spoof)
    elif family == 2:    # massive ties
        bona = np.round(rng.normal(0.5, 1.0, n_bona), 1)
        spoof = np.round(rng.normal(-0.5, 1.0, n_spoof), 1)
    else:                # mixed discrete/continuous
        bona = np.concatenate([rng.normal(1.0, 1.0, n_bona - 50),
                               np.full(50, 0.25)])
        spoof = np.concatenate([rng.normal(-1.0, 1.0, n_spoof - 50),
                                np.full(50, 0.25)])
    records = [(f"b{i}", s, "bonafide") for i, s in enumerate(bona)]
    records += [(f"s{i}", s, "spoof") for i, s in enumerate(spoof)]
    return ScoreSet.from_records(records), bona, spoof


def test_criterion_05_metric_oracles(rng):
    cm = TdcfCostModel()
    worst = 0.0
    for it in range(100):
        sset, bona, spoof = _random_score_set(rng)

        eer, thr = compute_eer(sset)
        o_eer, o_thr = _brute_eer(bona, spoof)
        worst = max(worst, abs(eer - o_eer), abs(thr - o_thr))

        mt, mthr = compute_min_tdcf(sset, cm)
        o_mt, o_mthr = _brute_min_tdcf(bona, spoof, cm)
        worst = max(worst, abs(mt - o_mt), abs(mthr - o_mthr))

        if it % 5 == 0:  # monotone transforms leave the EER untouched
            for f in (lambda x: 3.0 * x + 1.0, np.exp, np.arctan):
                recs = [(u, float(f(s)), k) for (u, s, k) in sset.records()]
                eer_t, _ = compute_eer(ScoreSet.from_records(recs))
                assert eer_t == eer, (it, f)
    assert worst <= 1e-12, worst
    print(f"criterion 5: worst oracle gap {worst:.3g} over 100 sets")


# ===================================================================
# criterion 6 — PGD invariants: perturbations stay inside the L-inf
# ball on 1,000 random batches; a linear model moves exactly
# steps * alpha when unconstrained; a convex attack loss never drops
# ===================================================================


class _LinearLogit(Module):
    """Logits linear in the input: per-row CE gradient signs are constant."""

    def __init__(self, length, seed):
        super().__init__()
        r = np.random.default_rng(seed)
        self.w = Parameter(r.normal(size=(length, 2)))
        self.class_vectors = Parameter(r.normal(size=(2, 2)))

    def forward(self, x):
        logits = x @ self.w
        return logits, logits


def _tiny_encoder(seed):
    cfg = EncoderConfig(input_len=400, num_filters=6, sinc_kernel_len=65,
                        sinc_pool=(3, 4), block_channels=(4, 4), gru_hidden=6,
                        embed_dim=6, se_reduction=2)
    return SpoofEncoder(cfg, np.random.default_rng(seed))


def _ce_value(model, x, y, weights):
    with no_grad():
        _, logits = model(Tensor(x))
        return float(weighted_ce(logits, y, weights).data)


def test_criterion_06_pgd_invariants(rng):
    lin = _LinearLogit(16, seed=5)
    enc = _tiny_encoder(seed=6)
    slack = 1.0 + 1e-12

    # (a) ball containment on 1,000 random batches: 960 linear + 40 encoder
    for i in range(1000):
        if i < 960:
            model, length = lin, 16
        else:
            model, length = enc, 400
        n = int(rng.integers(1, 5))
        x = rng.uniform(-1.0, 1.0, size=(n, length))
        y = rng.integers(0, 2, size=n)
        cfg = AttackConfig(delta=float(rng.uniform(1e-4, 0.05)),
                           alpha=float(rng.uniform(1e-4, 0.02)),
                           steps=int(rng.integers(1, 5)))
        x_adv = pgd_attack(model, x, y, cfg)
        assert np.max(np.abs(x_adv - x)) <= cfg.delta * slack, i
        assert np.max(np.abs(x_adv)) <= 1.0, i

    # (b) unconstrained linear model: displacement is exactly steps * alpha.
    # Dyadic x and alpha make the accumulated float steps exact.
    alpha = 2.0 ** -7
    for _ in range(200):
        steps = int(rng.integers(1, 7))
        x = rng.integers(-24, 25, size=(3, 16)) * 2.0 ** -5
        y = rng.integers(0, 2, size=3)
        cfg = AttackConfig(delta=1.0, alpha=alpha, steps=steps)
        x_adv = pgd_attack(lin, x, y, cfg)
        assert np.all(np.abs(x_adv - x) == steps * alpha), steps

    # (c) CE of a linear model is convex in x: the attack loss cannot drop
    for _ in range(200):
        x = rng.uniform(-0.9, 0.9, size=(4, 16))
        y = rng.integers(0, 2, size=4)
        cfg = AttackConfig(delta=float(rng.uniform(0.001, 0.05)),
                           alpha=float(rng.uniform(0.001, 0.02)),
                           steps=int(rng.integers(1, 7)))
        x_adv = pgd_attack(lin, x, y, cfg)
        before = _ce_value(lin, x, y, cfg.class_weights)
        after = _ce_value(lin, x_adv, y, cfg.class_weights)
        assert after >= before - 1e-12, (before, after)
    print("criterion 6: ball containment (1000), exact linear displacement, "
          "convex non-decrease all hold")


# ===================================================================
# criterion 7 — dual-BN isolation: interleaved adversarial passes
# leave the main bank bit-identical; eval reads only the main bank
# ===================================================================


def test_criterion_07_dual_bn_isolation(rng):
    waves = [rng.uniform(-1.0, 1.0, size=(4, 400)) for _ in range(6)]
    labels = np.array([0, 1, 0, 1])
    atk = AttackConfig(delta=0.01, alpha=0.005, steps=2)

    # run A: clean training forwards only
    enc_a = _tiny_encoder(seed=11)
    aux_init = bn_fingerprint(enc_a, "aux")
    for w in waves:
        enc_a.encode(Tensor(w), bank="main", train=True)
    fp_main_a = bn_fingerprint(enc_a, "main")
    assert np.array_equal(bn_fingerprint(enc_a, "aux"), aux_init)

    # run B: same clean forwards with a full adversarial pass interleaved
    enc_b = _tiny_encoder(seed=11)
    for w in waves:
        enc_b.encode(Tensor(w), bank="main", train=True)
        x_adv = pgd_attack(enc_b, w, labels, atk)
        enc_b.encode(Tensor(x_adv), bank="aux", train=True)
    assert np.array_equal(fp_main_a, bn_fingerprint(enc_b, "main"))
    assert not np.array_equal(bn_fingerprint(enc_b, "aux"), aux_init)

    # eval depends on the main bank only: corrupting aux changes nothing,
    # and the bank selector is ignored outside training
    with no_grad():
        ref = enc_b.encode(Tensor(waves[0]), bank="main", train=False)[1].data.copy()
    for m in enc_b.modules():
        if isinstance(m, DualBatchNorm):
            m._buffers["running_mean_aux"] += 1000.0
            m._buffers["running_var_aux"] *= 50.0
    with no_grad():
        out = enc_b.encode(Tensor(waves[0]), bank="aux", train=False)[1].data
    assert np.array_equal(ref, out)
    print("criterion 7: main bank bit-identical; eval ignores aux bank")


# ===================================================================
# criterion 8 — episode invariants over 1,000 samples: composition
# sizes, held-out exclusion, closed-form pair-label count
# ===================================================================


def test_criterion_08_episode_invariants(rng):
    n_types, k = 6, 2
    index = {f"A{i:02d}": [f"A{i:02d}_u{j}" for j in range(k + 3)]
             for i in range(1, n_types + 1)}
    index[BONAFIDE_KEY] = [f"bona_{j}" for j in range(2 * k + 3)]
    attack_ids = set(index) - {BONAFIDE_KEY}
    match_target = (n_types - 1) * k * k + k * k

    held_seen = set()
    for _ in range(1000):
        ep = sample_episode(index, n_types, k, rng)
        assert len(ep.support) == n_types * k
        assert len(ep.query) == 2 * k
        support_attacks = {att for _, lab, att in ep.support if lab == 0}
        assert ep.held_out_attack not in support_attacks
        assert len(support_attacks) == n_types - 1
        assert sum(1 for _, lab, _ in ep.support if lab == 1) == k
        assert sum(1 for _, lab, _ in ep.query if lab == 1) == k
        labs = pair_labels(ep)
        assert labs.shape == (n_types * k, 2 * k)
        assert labs.sum() == match_target
        held_seen.add(ep.held_out_attack)
    assert held_seen == attack_ids  # uniform draw covers every attack in 1,000
    print(f"criterion 8: 1000 episodes valid, {match_target} matches each")


# ===================================================================
# criteria 9 and 10 — the desk-scale experiment and its determinism
# ===================================================================

ABLATIONS = (
    # name, overrides on top of configs/desk.cfg
    ("ce", {"loss.variant": "ce", "loss.weight_spoof": "1.0",
            "loss.weight_genuine": "1.0", "meta.enabled": "false",
            "adv.enabled": "false"}),
    ("waam", {"meta.enabled": "false", "adv.enabled": "false"}),
    ("mse", {"adv.enabled": "false"}),
    ("full", {}),
)


def _desk_pipeline(root):
    """Corpus + the four training legs; returns per-leg artefacts."""
    corpus = root / "corpus"
    base = load_config([str(DESK_CFG)], {"data.dir": str(corpus)})
    gen_synthetic_corpus(base.synth_config(), str(corpus))

    legs = {}
    for name, extra in ABLATIONS:
        overrides = {"data.dir": str(corpus)}
        overrides.update(extra)
        cfg = load_config([str(DESK_CFG)], overrides)
        run_dir = root / f"run_{name}"
        t0 = time.time()
        summary = train_single(cfg, seed=1, run_dir=str(run_dir))
        train_seconds = time.time() - t0
        res = evaluate_run(cfg, str(run_dir / "best.ckpt"), None,
                           str(root / f"eval_{name}"))
        legs[name] = {
            "cfg": cfg,
            "summary": summary,
            "eval": res,
            "train_seconds": train_seconds,
            "curves": run_dir / "loss_curves.csv",
        }
    return {"root": root, "corpus": corpus, "legs": legs}


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    return _desk_pipeline(tmp_path_factory.mktemp("desk"))


def _read_curves(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    assert header == LOSS_CSV_HEADER
    cols = {name: [r[i] for r in rows] for i, name in enumerate(header)}
    return cols


def _assert_fused_arithmetic(cols, fusion_lambda, with_adv):
    """Logged decomposition re-adds to the logged totals (8-digit logs)."""
    for i in range(len(cols["step"])):
        l_w, l_m, l_f = (float(cols[c][i]) for c in ("L_W", "L_M", "L_F"))
        tol = 1e-5 * max(1.0, abs(l_f))
        assert abs(l_f - (l_w + fusion_lambda * l_m)) <= tol, i
        total = float(cols["total"][i])
        l_adv = float(cols["L_W_adv"][i]) if with_adv else 0.0
        assert abs(total - (l_f + l_adv)) <= 1e-5 * max(1.0, abs(total)), i


def test_criterion_09_desk_scale_end_to_end(desk):
    legs = desk["legs"]
    full = legs["full"]
    cfg = full["cfg"]

    # corpus is the stated desk fixture
    train = parse_protocol(str(desk["corpus"] / "train_protocol.txt"))
    evalp = parse_protocol(str(desk["corpus"] / "eval_protocol.txt"))
    attacks_eval = {e.system for e in evalp if e.key == "spoof"}
    attacks_train = {e.system for e in train if e.key == "spoof"}
    holdout = cfg["synth.holdout_attack"]
    assert cfg["encoder.input_len"] == 6460
    assert len(attacks_eval) == 6
    assert 220 <= len(train) <= 260
    assert 100 <= len(evalp) <= 140
    assert holdout in attacks_eval and holdout not in attacks_train

    # headline run: budget and quality
    assert cfg["optim.epochs"] <= 30
    assert full["train_seconds"] <= 900.0, full["train_seconds"]
    assert full["eval"]["eer"] <= 0.05, full["eval"]["eer"]
    assert holdout in full["eval"]["per_attack"]

    # every leg finished and logged the right loss decomposition
    for name, leg in legs.items():
        cols = _read_curves(leg["curves"])
        assert all(v != "" for v in cols["L_W"]), name
        assert all(v != "" for v in cols["total"]), name
        meta_on = name in ("mse", "full")
        adv_on = name == "full"
        if meta_on:
            assert all(v != "" for v in cols["L_M"]), name
            _assert_fused_arithmetic(cols, cfg["loss.fusion_lambda"], adv_on)
        else:
            assert all(v == "" for v in cols["L_M"]), name
            assert cols["L_F"] == cols["L_W"], name
        if adv_on:
            assert all(v != "" for v in cols["L_W_adv"]), name
        else:
            assert all(v == "" for v in cols["L_W_adv"]), name

    # ablation chain: each addition costs at most 2 points of eval EER
    chain = [legs[n]["eval"]["eer"] for n, _ in ABLATIONS]
    for prev, nxt in zip(chain, chain[1:]):
        assert nxt <= prev + 0.02 + 1e-12, chain
    print("criterion 9: eval EER chain "
          + " -> ".join(f"{e:.4f}" for e in chain)
          + f"; full run {full['train_seconds'] / 60:.1f} min")


def test_criterion_10_bitwise_determinism(desk, tmp_path_factory):
    rerun = _desk_pipeline(tmp_path_factory.mktemp("desk_rerun"))
    for name, _ in ABLATIONS:
        a, b = desk["legs"][name], rerun["legs"][name]
        for key in ("scores_path", "report_path"):
            pa, pb = Path(a["eval"][key]), Path(b["eval"][key])
            assert pa.read_bytes() == pb.read_bytes(), (name, key)
        assert a["curves"].read_bytes() == b["curves"].read_bytes(), name
        assert a["eval"]["eer"] == b["eval"]["eer"], name
        assert a["eval"]["min_tdcf"] == b["eval"]["min_tdcf"], name
    print("criterion 10: score files, metric reports, and loss curves "
          "bit-identical across independent reruns")

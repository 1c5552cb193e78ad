"""PGD waveform attacks and the disentangled training step.

The attack perturbs inputs inside an L-inf ball while the model's
auxiliary batch-norm bank handles the (differently-distributed)
adversarial activations; the main bank only ever sees clean audio.  One
training step combines the clean fused objective with a classification
loss on the adversarial batch and updates encoder + relation net jointly.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, default_dtype, index_select, set_bn_bank, set_bn_update
from .losses import MarginConfig, fuse, margin_softmax, relation_mse, total_objective, weighted_ce
from .meta import RelationNet, relation_forward

ATTACK_LOSSES = ("ce", "waam")


@dataclass
class AttackConfig:
    """L-inf PGD attack parameters.

    delta=0 degenerates to the identity attack (empty perturbation set).
    The inner loop maximizes either the weighted-CE head or the margin
    head, per ``attack_loss``.
    """

    delta: float = 0.002
    alpha: float = 0.0001
    steps: int = 12
    attack_loss: str = "ce"
    class_weights: tuple = (0.9, 0.1)  # (spoof, genuine) for the CE head
    update_aux_stats_during_attack: bool = False

    def validate(self) -> None:
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.attack_loss not in ATTACK_LOSSES:
            raise ValueError(f"attack_loss must be one of {ATTACK_LOSSES}")
        if len(self.class_weights) != 2 or min(self.class_weights) <= 0:
            raise ValueError("class_weights must be two positive numbers")


def _attack_loss(cfg: AttackConfig, margin: MarginConfig | None,
                 emb: Tensor, logits: Tensor, labels: np.ndarray,
                 class_vectors) -> Tensor:
    if cfg.attack_loss == "ce":
        return weighted_ce(logits, labels, cfg.class_weights)
    if margin is None:
        raise ValueError("attack_loss='waam' needs a margin config")
    return margin_softmax(emb, labels, class_vectors, margin)


def pgd_attack(model, x, y, cfg: AttackConfig,
               margin: MarginConfig | None = None) -> np.ndarray:
    """Iterated sign-gradient ascent on the attack loss, projected twice.

    Runs the model in train mode on the auxiliary BN bank with running-stat
    updates suppressed (unless configured otherwise); parameters are frozen
    for the duration so no gradient leaks into them.  Projection clips to
    [x - delta, x + delta] and then to the valid sample range [-1, 1].
    Returns a plain array; the caller decides what to do with it.
    """
    cfg.validate()
    y = np.asarray(y)
    x0 = np.array(getattr(x, "data", x), dtype=default_dtype(), copy=True)
    lo = np.maximum(x0 - cfg.delta, -1.0)
    hi = np.minimum(x0 + cfg.delta, 1.0)

    was_training = model.training
    frozen = [(p, p.requires_grad) for _, p in model.named_parameters()]
    for p, _ in frozen:
        p.requires_grad = False
    model.train(True)
    set_bn_bank(model, "aux")
    set_bn_update(model, cfg.update_aux_stats_during_attack)
    try:
        x_adv = x0.copy()
        for _ in range(cfg.steps):
            # np.clip below rebinds x_adv, so wrapping without a copy is safe
            xt = Tensor(x_adv, requires_grad=True)
            emb, logits = model(xt)
            loss = _attack_loss(cfg, margin, emb, logits, y, model.class_vectors)
            loss.backward()
            g = xt.grad
            if g is None or not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient during attack")
            x_adv = np.clip(x_adv + cfg.alpha * np.sign(g), lo, hi)
    finally:
        for p, flag in frozen:
            p.requires_grad = flag
        set_bn_update(model, True)
        set_bn_bank(model, "main")
        model.train(was_training)
    return x_adv


def substitute_bonafide(x_adv: np.ndarray, x_orig: np.ndarray,
                        labels: np.ndarray) -> np.ndarray:
    """Keep adversaries for spoof rows, restore originals for genuine rows."""
    labels = np.asarray(labels)
    if x_adv.shape != x_orig.shape or labels.shape[0] != x_adv.shape[0]:
        raise ValueError("batch shapes disagree")
    keep = (labels == 1)[:, None]
    return np.where(keep, x_orig, x_adv)


@dataclass
class StepConfig:
    """Everything one optimizer step needs to know about the objective."""

    variant: str = "waam"  # ce | nsl | am | aam | waam
    margin: MarginConfig = field(default_factory=MarginConfig)
    fusion_lambda: float = 0.8
    meta_enabled: bool = True
    attack: AttackConfig | None = None

    def validate(self) -> None:
        if self.variant == "ce":
            pass  # margins unused; weights are read off self.margin
        else:
            if self.margin.variant != self.variant:
                raise ValueError("StepConfig.variant disagrees with margin.variant")
            self.margin.validate()
        if not 0.0 <= self.fusion_lambda <= 1.0:
            raise ValueError("fusion_lambda must lie in [0, 1]")
        if self.attack is not None:
            self.attack.validate()


@dataclass
class EpisodeBatch:
    """A materialized mini-batch: waveforms plus episode bookkeeping.

    Rows [0, n_support) are the support set, the rest the query set.  For
    plain (non-episodic) batches n_support is 0 and match is None.
    """

    waves: np.ndarray
    labels: np.ndarray
    n_support: int = 0
    match: np.ndarray | None = None


def _classifier_loss(cfg: StepConfig, emb: Tensor, logits: Tensor,
                     labels: np.ndarray, class_vectors) -> Tensor:
    if cfg.variant == "ce":
        w = (cfg.margin.weight_spoof, cfg.margin.weight_genuine)
        return weighted_ce(logits, labels, w)
    return margin_softmax(emb, labels, class_vectors, cfg.margin)


def disentangled_step(model, relation_net: RelationNet | None,
                      batch: EpisodeBatch, cfg: StepConfig,
                      optimizer, lr: float | None = None) -> dict:
    """One joint update: clean fused loss + adversarial classification loss.

    Clean forward uses the main BN bank; the adversarial branch generates
    PGD examples on the auxiliary bank, restores originals for bonafide
    rows, and runs one stats-updating forward on the auxiliary bank.  A
    single backward then updates encoder and relation net together.
    Returns the step report with float loss components (disabled branches
    report None).
    """
    cfg.validate()
    waves = np.asarray(batch.waves, dtype=default_dtype())
    labels = np.asarray(batch.labels)

    model.train(True)
    set_bn_bank(model, "main")
    set_bn_update(model, True)
    emb, logits = model(Tensor(waves))
    l_w = _classifier_loss(cfg, emb, logits, labels, model.class_vectors)

    l_m = None
    if cfg.meta_enabled and batch.n_support > 0:
        if relation_net is None:
            raise ValueError("meta head enabled but no relation net given")
        if batch.match is None:
            raise ValueError("episodic batch lacks a match matrix")
        ns, n = batch.n_support, waves.shape[0]
        s_emb = index_select(emb, np.arange(ns))
        q_emb = index_select(emb, np.arange(ns, n))
        scores = relation_forward(s_emb, q_emb, relation_net)
        l_m = relation_mse(scores, batch.match)
        l_f = fuse(l_w, l_m, cfg.fusion_lambda)
    else:
        l_f = l_w

    l_w_adv = None
    if cfg.attack is not None:
        x_adv = pgd_attack(model, waves, labels, cfg.attack, margin=cfg.margin)
        x_mix = substitute_bonafide(x_adv, waves, labels)
        model.train(True)
        set_bn_bank(model, "aux")
        set_bn_update(model, True)
        emb_a, logits_a = model(Tensor(x_mix))
        l_w_adv = _classifier_loss(cfg, emb_a, logits_a, labels, model.class_vectors)
        set_bn_bank(model, "main")

    total = total_objective(l_f, l_w_adv)

    leaves = [p for _, p in model.named_parameters()]
    if relation_net is not None:
        leaves += [p for _, p in relation_net.named_parameters()]
    optimizer.zero_grad()
    total.backward(leaves=leaves)
    optimizer.step(lr)

    def val(t):
        return None if t is None else float(t.data)

    return {
        "L_W": val(l_w),
        "L_M": val(l_m),
        "L_F": val(l_f),
        "L_W_adv": val(l_w_adv),
        "total": val(total),
    }

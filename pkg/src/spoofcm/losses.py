"""Classification objectives.

Margin-softmax family over cosine logits of L2-normalized embeddings and
class vectors: nsl (scaled cosine), am (additive cosine margin), aam
(additive angular margin), waam (aam with per-class margins and per-sample
class weights).  Per-sample loss is the two-class softplus form
log(1 + exp(s*cos(theta_other) - target_logit)); waam multiplies it by the
weight of the sample's class before averaging.

Also: weighted cross-entropy on raw logits, the relation-score MSE, the
fusion sum, and the total two-branch objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, log_softmax, normalize, softplus, take_rows

VARIANTS = ("nsl", "am", "aam", "waam")


@dataclass
class MarginConfig:
    variant: str = "waam"
    scale: float = 32.0
    margin_spoof: float = 0.2     # class 0
    margin_genuine: float = 0.9   # class 1
    weight_spoof: float = 0.9     # class 0
    weight_genuine: float = 0.1   # class 1

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        hi = 1.0 if self.variant == "am" else math.pi / 2
        for m in (self.margin_spoof, self.margin_genuine):
            if not 0.0 <= m < hi:
                raise ValueError(f"margin {m} outside [0, {hi}) for variant {self.variant}")
        if self.variant in ("am", "aam") and self.margin_spoof != self.margin_genuine:
            raise ValueError(f"variant {self.variant} uses a single margin; "
                             "set margin_spoof == margin_genuine")
        if self.weight_spoof <= 0 or self.weight_genuine <= 0:
            raise ValueError("class weights must be positive")

    def margins(self) -> np.ndarray:
        return np.array([self.margin_spoof, self.margin_genuine])

    def weights(self) -> np.ndarray:
        return np.array([self.weight_spoof, self.weight_genuine])


def _check_labels(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary 0 (spoof) / 1 (genuine)")
    return labels.astype(np.int64)


def weighted_ce(logits: Tensor, labels, class_weights=(1.0, 1.0)) -> Tensor:
    """Mean over the batch of w_{y_i} * (-log softmax(logits)_{y_i})."""
    if logits.ndim != 2:
        raise ValueError("logits must be (N, num_classes)")
    n = logits.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    labels = _check_labels(labels, n)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    logp = take_rows(log_softmax(logits, axis=1), labels)
    return (Tensor(w.astype(logits.dtype)) * (-logp)).mean()


def margin_softmax(embeddings: Tensor, labels, class_vectors: Tensor,
                   cfg: MarginConfig) -> Tensor:
    """Two-class margin softmax; gradients reach embeddings and class vectors."""
    cfg.validate()
    if embeddings.ndim != 2 or class_vectors.ndim != 2:
        raise ValueError("embeddings (N, D) and class_vectors (D, 2) expected")
    n, d = embeddings.shape
    if n == 0:
        raise ValueError("empty batch")
    if class_vectors.shape != (d, 2):
        raise ValueError(f"class_vectors shape {class_vectors.shape} != ({d}, 2)")
    labels = _check_labels(labels, n)

    xn = normalize(embeddings, axis=1)
    wn = normalize(class_vectors, axis=0)
    cos = (xn @ wn).clamp(-1.0 + 1e-7, 1.0 - 1e-7)   # (N, 2)
    cos_y = take_rows(cos, labels)
    cos_other = take_rows(cos, 1 - labels)

    s = cfg.scale
    if cfg.variant == "nsl":
        target = s * cos_y
    elif cfg.variant == "am":
        target = s * (cos_y - cfg.margin_spoof)
    else:  # aam / waam: cos(theta + m) = cos t cos m - sin t sin m
        m = cfg.margins()[labels]
        sin_y = (1.0 - cos_y * cos_y).clamp(0.0, None).sqrt()
        target = s * (cos_y * Tensor(np.cos(m).astype(cos_y.dtype))
                      - sin_y * Tensor(np.sin(m).astype(cos_y.dtype)))

    per_sample = softplus(s * cos_other - target)
    if cfg.variant == "waam":
        w = cfg.weights()[labels]
        per_sample = per_sample * Tensor(w.astype(per_sample.dtype))
    return per_sample.mean()


def relation_mse(scores: Tensor, match_labels) -> Tensor:
    """(1 / (2 N K^2)) * sum (r_ij - label_ij)^2 over the (NK, 2K) grid."""
    match_labels = np.asarray(match_labels)
    if scores.shape != match_labels.shape:
        raise ValueError(f"scores {scores.shape} vs labels {match_labels.shape}")
    if not np.isin(match_labels, (0, 1)).all():
        raise ValueError("match labels must be binary")
    diff = scores - Tensor(match_labels.astype(scores.dtype))
    return (diff * diff).sum() * (1.0 / scores.size)


def fuse(l_w: Tensor, l_m: Tensor, fusion_lambda: float = 0.8) -> Tensor:
    return l_w + fusion_lambda * l_m


def total_objective(l_f: Tensor, l_w_adv: Tensor | None) -> Tensor:
    if l_w_adv is None:
        return l_f
    return l_f + l_w_adv

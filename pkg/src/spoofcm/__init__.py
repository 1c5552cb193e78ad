"""Desk-scale training/evaluation stack for synthetic-audio spoofing countermeasures."""

from . import adversary, attention, autodiff, config, data, encoder, losses, meta, metrics, runner, sincfront

__all__ = [
    "adversary", "attention", "autodiff", "config", "data", "encoder",
    "losses", "meta", "metrics", "runner", "sincfront",
]

"""Pairwise margin contrastive loss over utterance representations.

For every pair ``i < j`` of one dialogue, with ``d`` the euclidean distance
between ``r_i`` and ``r_j``::

    same session:       0.5 * d**2
    different session:  0.5 * max(0, margin - d)**2

The dialogue loss sums (or averages) these terms; pairs never cross dialogues.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from clucdd.exceptions import ConfigError

REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class ContrastiveConfig:
    margin: float = 1.0
    gamma: float = 0.1
    reduction: str = "sum"

    def __post_init__(self):
        if not self.margin > 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")


class PairLabel(NamedTuple):
    i: int
    j: int
    y: int  # 0 = same session, 1 = different


def pair_labels(gold) -> list[PairLabel]:
    labels = list(getattr(gold, "labels", gold))
    n = len(labels)
    return [
        PairLabel(i, j, int(labels[i] != labels[j]))
        for i in range(n)
        for j in range(i + 1, n)
    ]


def pair_distance(r_i, r_j) -> float:
    return float(np.linalg.norm(np.asarray(r_i, dtype=np.float64) - np.asarray(r_j, dtype=np.float64)))


def pair_loss(d: float, y: int, margin: float) -> float:
    if y:
        return 0.5 * max(0.0, margin - d) ** 2
    return 0.5 * d * d


def _pair_terms(r, labels, valid, margin):
    """Loss and gradient over a padded batch ``r`` of shape ``(B, T, d)``.

    ``labels`` is ``(B, T)``; ``valid`` marks real rows.  Returns per-dialogue
    losses, per-dialogue pair counts and ``dL/dr``.
    """
    diff = r[:, :, None, :] - r[:, None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    T = r.shape[1]
    upper = np.triu(np.ones((T, T), dtype=bool), k=1)
    pair_ok = valid[:, :, None] & valid[:, None, :]
    same = labels[:, :, None] == labels[:, None, :]
    hinge = np.maximum(0.0, margin - dist)
    terms = np.where(same, 0.5 * dist * dist, 0.5 * hinge * hinge)
    counted = pair_ok & upper
    losses = np.sum(np.where(counted, terms, 0.0), axis=(1, 2))
    n_pairs = counted.sum(axis=(1, 2))

    # dL/dr_i = sum_j coef_ij (r_i - r_j), symmetric coef, zero diagonal
    with np.errstate(divide="ignore", invalid="ignore"):
        dis_coef = np.where(dist > 0, -hinge / dist, 0.0)
    coef = np.where(same, 1.0, dis_coef)
    coef = np.where(pair_ok & ~np.eye(T, dtype=bool), coef, 0.0)
    grad = coef.sum(axis=2)[..., None] * r - coef @ r
    return losses, n_pairs, grad


def contrastive_loss_batch(r, labels, lengths, config: ContrastiveConfig):
    """Per-dialogue losses and the gradient of their sum."""
    lengths = np.asarray(lengths)
    T = r.shape[1]
    valid = np.arange(T)[None, :] < lengths[:, None]
    losses, n_pairs, grad = _pair_terms(r, labels, valid, config.margin)
    if config.reduction == "mean":
        scale = np.where(n_pairs > 0, 1.0 / np.maximum(n_pairs, 1), 0.0)
        losses = losses * scale
        grad = grad * scale[:, None, None]
    return losses, grad


def contrastive_loss(r, gold, config: ContrastiveConfig | None = None):
    """Loss of one dialogue's ``n x d`` representations and its gradient."""
    config = config or ContrastiveConfig()
    r = np.asarray(r, dtype=np.float64)
    labels = np.asarray(list(getattr(gold, "labels", gold)), dtype=np.int64)
    if labels.shape[0] != r.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {r.shape[0]} representations")
    losses, grad = contrastive_loss_batch(r[None], labels[None], [r.shape[0]], config)
    return float(losses[0]), grad[0]


def total_loss(contrastive: float, head: float, gamma: float) -> float:
    return contrastive + gamma * head

"""Session-count head: unidirectional LSTM, final state, linear, softmax.

Class ``j`` stands for ``k = j + 1`` sessions, ``k`` in ``1..k_max``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from clucdd.exceptions import ConfigError, ValidationError
from clucdd.lstm import init_lstm, lstm_backward, lstm_forward


def init_head_params(dim: int, k_max: int, rng) -> dict:
    if k_max < 2:
        raise ConfigError(f"k_max must be at least 2, got {k_max}")
    scale = 1.0 / np.sqrt(dim)
    params = init_lstm(rng, dim, dim, scale, prefix="head.lstm.")
    params["head.out.W"] = rng.uniform(-scale, scale, size=(k_max, dim))
    params["head.out.b"] = np.zeros(k_max)
    return params


@dataclass
class HeadActivations:
    logits: np.ndarray
    log_probs: np.ndarray
    last: np.ndarray
    lengths: np.ndarray
    cache: tuple

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def head_forward_batch(u, lengths, params) -> HeadActivations:
    lengths = np.asarray(lengths)
    if np.any(lengths < 1):
        raise ValidationError("the session-count head needs at least one utterance")
    hs, cache = lstm_forward(u, params["head.lstm.Wx"], params["head.lstm.Wh"], params["head.lstm.b"])
    last = hs[np.arange(len(lengths)), lengths - 1]
    logits = last @ params["head.out.W"].T + params["head.out.b"]
    return HeadActivations(logits, log_softmax(logits, axis=-1), last, lengths, cache)


def head_loss_batch(act: HeadActivations, k_gold):
    """Per-dialogue cross-entropy ``-log P(k_gold)`` and ``dL/dlogits``."""
    k_gold = np.asarray(k_gold)
    k_max = act.logits.shape[1]
    if np.any(k_gold < 1) or np.any(k_gold > k_max):
        raise ValidationError(f"gold session counts must lie in 1..{k_max}, got {k_gold.tolist()}")
    rows = np.arange(len(k_gold))
    losses = -act.log_probs[rows, k_gold - 1]
    dlogits = act.probs
    dlogits[rows, k_gold - 1] -= 1.0
    return losses, dlogits


def head_backward_batch(act: HeadActivations, params, dlogits):
    """Returns ``(grads, grad_u)`` for an upstream gradient on the logits."""
    grads = {
        "head.out.W": dlogits.T @ act.last,
        "head.out.b": dlogits.sum(axis=0),
    }
    dlast = dlogits @ params["head.out.W"]
    B, T, H = act.cache[-1].shape
    dhs = np.zeros((B, T, H))
    dhs[np.arange(B), act.lengths - 1] = dlast
    du, g = lstm_backward(dhs, act.cache)
    for name, val in g.items():
        grads["head.lstm." + name] = val
    return grads, du


def head_forward(embeddings, params) -> np.ndarray:
    """Distribution over ``k = 1..k_max`` for one ``n x d`` dialogue."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    act = head_forward_batch(embeddings[None], [embeddings.shape[0]], params)
    return act.probs[0]


def head_loss(dist, k_gold: int) -> float:
    dist = np.asarray(dist, dtype=np.float64)
    if not 1 <= int(k_gold) <= len(dist):
        raise ValidationError(f"gold session count {k_gold} outside 1..{len(dist)}")
    p = dist[int(k_gold) - 1]
    return float(-np.log(p)) if p > 0 else float("inf")


def predict_k(dist) -> int:
    """Most probable session count; ``argmax`` picks the smaller k on ties."""
    return int(np.argmax(np.asarray(dist))) + 1

"""Turning a trained model into session labels, and scoring them."""

from __future__ import annotations

import numpy as np

from clucdd.clustering import cluster_points
from clucdd.corpus import SessionLabeling
from clucdd.exceptions import ConfigError
from clucdd.metrics import evaluate_corpus

K_SOURCES = ("gold", "head", "given")


def predict_sessions(model, dialogues, method="kmeans", k_source="head", k=None, seed=0, **cluster_params):
    """Session labels for each dialogue; ``k`` comes from gold labels, the head or ``k``."""
    if not dialogues:
        return []
    if k_source not in K_SOURCES:
        raise ConfigError(f"unknown k_source {k_source!r}")
    reps = model.represent(dialogues)
    ks = [None] * len(dialogues)
    if method in ("kmeans", "gmm"):
        if k_source == "gold":
            if not all(d.is_labeled for d in dialogues):
                raise ConfigError("k_source 'gold' needs session-labeled dialogues")
            ks = [d.k for d in dialogues]
        elif k_source == "head":
            ks = [int(np.argmax(p)) + 1 for p in model.session_distribution(dialogues)]
        else:
            if k is None:
                raise ConfigError("k_source 'given' needs an explicit k")
            ks = [int(k)] * len(dialogues)
        # a predicted or given count can exceed a short dialogue's length
        ks = [min(kk, d.n) for kk, d in zip(ks, dialogues)]
    return [
        cluster_points(r, method, k=kk, seed=seed, **cluster_params).labels
        for r, kk in zip(reps, ks)
    ]


def disentangle(model, dialogue, method="kmeans", k_source="head", k=None, seed=0, **cluster_params) -> SessionLabeling:
    """Session labeling of a single dialogue."""
    return predict_sessions(model, [dialogue], method, k_source, k, seed, **cluster_params)[0]


def evaluate_model(model, dialogues, method="kmeans", k_source="gold", seed=0, **cluster_params):
    """Cluster each dialogue's representations and score against gold sessions."""
    preds = predict_sessions(model, dialogues, method=method, k_source=k_source, seed=seed, **cluster_params)
    return evaluate_corpus(
        [(d.labeling, p) for d, p in zip(dialogues, preds)],
        [d.dialogue_id for d in dialogues],
    )

"""Shared builders for small dialogues and gradient-check instances."""

from __future__ import annotations

import numpy as np

from clucdd.corpus import Dialogue, Utterance
from clucdd.encoder import MeanPoolEncoder, TokenVocabulary
from clucdd.model import DisentanglementModel

WORDS = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"]


def make_dialogue(labels, texts=None, dialogue_id="d0", speakers=None):
    texts = texts or [f"w{i}" for i in range(len(labels))]
    speakers = speakers or [f"s{lab}" if lab is not None else "s" for lab in labels]
    return Dialogue(
        dialogue_id,
        tuple(Utterance(f"{dialogue_id}-{i}", speakers[i], texts[i], lab) for i, lab in enumerate(labels)),
    )


def random_dialogue(rng, n, k, dialogue_id="d0"):
    while True:
        labels = rng.integers(k, size=n)
        if len(set(labels.tolist())) == k:
            break
    texts = [" ".join(rng.choice(WORDS, size=3)) for _ in range(n)]
    return make_dialogue([int(v) for v in labels], texts, dialogue_id)


def gradient_instance(seed, n=4, d=8, k_max=4, variant="full", margin=1.0):
    """A one-dialogue model with a unit-scale token table.

    Unit scale keeps activations away from zero, so the ReLU and hinge kinks
    are not hit by the finite-difference step; instances that still land
    within 1e-4 of a kink are reported via ``near_kink``.
    """
    rng = np.random.default_rng(seed)
    dialogue = random_dialogue(rng, n, 2)
    vocab = TokenVocabulary(["<unk>"] + WORDS, rng.standard_normal((len(WORDS) + 1, d)), 0)
    model = DisentanglementModel.initialize(MeanPoolEncoder(vocab), d, k_max, variant, seed=seed)
    return model, model.make_batch([dialogue])


def near_kink(model, batch, margin, tol=1e-4):
    _, sff, _ = model.forward(batch)
    if sff.z is not None and np.min(np.abs(sff.z)) < tol:
        return True
    r = sff.r[0, : batch.lengths[0]]
    dist = np.linalg.norm(r[:, None] - r[None], axis=-1)
    return bool(np.any(np.abs(dist - margin)[np.triu_indices(len(r), 1)] < tol))

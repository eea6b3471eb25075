"""Full network: encoder -> SFF -> representations, encoder -> head -> session count.

All trainable tensors live in one flat ``dict[str, ndarray]`` so that the
optimizer, the gradient checker and the checkpoint writer share a single
naming scheme.  The encoder table, when trainable, is ``"encoder.table"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from clucdd.cluster_head import head_backward_batch, head_forward_batch, head_loss_batch, init_head_params
from clucdd.encoder import MeanPoolEncoder, PrecomputedEncoder, TokenVocabulary
from clucdd.exceptions import ValidationError
from clucdd.objective import ContrastiveConfig, contrastive_loss_batch
from clucdd.sff import init_sff_params, sff_backward_batch, sff_forward_batch

TABLE = "encoder.table"


@dataclass
class Batch:
    """Padded view of a list of dialogues ready for the network."""

    prepared: list
    lengths: np.ndarray
    labels: np.ndarray | None
    rows: tuple  # (batch_index, position) of every real utterance, in order

    @property
    def size(self) -> int:
        return len(self.prepared)

    @property
    def T(self) -> int:
        return int(self.lengths.max())

    @cached_property
    def pooling(self):
        """All dialogues' pooling matrices stacked, for table-based encoders."""
        return sparse.vstack(self.prepared, format="csr")


class DisentanglementModel:
    """Parameters plus batched forward/backward for the whole network."""

    def __init__(self, params: dict, encoder, dim: int, k_max: int, variant: str = "full"):
        self.params = params
        self.encoder = encoder
        self.dim = dim
        self.k_max = k_max
        self.variant = variant

    @classmethod
    def initialize(cls, encoder, dim: int, k_max: int, variant: str = "full", seed=0):
        rng = np.random.default_rng(seed)
        params = {}
        if isinstance(encoder, MeanPoolEncoder):
            if encoder.dim != dim:
                raise ValidationError(f"vocabulary dimension {encoder.dim} != model dimension {dim}")
            vocab = encoder.vocab
            encoder = MeanPoolEncoder(TokenVocabulary(list(vocab.tokens), vocab.table.copy(), vocab.unk_index))
            params[TABLE] = encoder.vocab.table
        elif encoder.dim != dim:
            raise ValidationError(f"precomputed embeddings have dimension {encoder.dim}, model expects {dim}")
        params.update(init_sff_params(dim, rng, variant))
        params.update(init_head_params(dim, k_max, rng))
        return cls(params, encoder, dim, k_max, variant)

    @property
    def vocab(self) -> TokenVocabulary | None:
        return self.encoder.vocab if isinstance(self.encoder, MeanPoolEncoder) else None

    def make_batch(self, dialogues, prepared=None) -> Batch:
        if prepared is None:
            prepared = [self.encoder.prepare(d) for d in dialogues]
        lengths = np.array([d.n for d in dialogues], dtype=np.int64)
        if np.any(lengths < 1):
            raise ValidationError("empty dialogue in batch")
        T = int(lengths.max())
        labels = None
        if all(d.is_labeled for d in dialogues):
            labels = np.full((len(dialogues), T), -1, dtype=np.int64)
            for b, d in enumerate(dialogues):
                labels[b, :d.n] = d.labeling.labels
        rows = (
            np.repeat(np.arange(len(dialogues)), lengths),
            np.concatenate([np.arange(n) for n in lengths]),
        )
        return Batch(list(prepared), lengths, labels, rows)

    def encode(self, batch: Batch, params=None) -> np.ndarray:
        params = self.params if params is None else params
        if TABLE in params:
            flat = batch.pooling @ params[TABLE]
        else:
            flat = np.concatenate(batch.prepared, axis=0)
        u = np.zeros((batch.size, batch.T, self.dim))
        u[batch.rows] = flat
        return u

    def forward(self, batch: Batch, params=None):
        params = self.params if params is None else params
        u = self.encode(batch, params)
        sff = sff_forward_batch(u, batch.lengths, params, self.variant)
        head = head_forward_batch(u, batch.lengths, params)
        return u, sff, head

    def loss_and_grads(self, batch: Batch, config: ContrastiveConfig, params=None, need_grads=True):
        """Batch loss ``mean_b(L_C + gamma * L_H)`` and its gradient.

        Returns ``(loss, parts, grads)``, ``parts`` holding the per-dialogue
        contrastive and head losses.
        """
        if batch.labels is None:
            raise ValidationError("training batch contains unlabeled dialogues")
        params = self.params if params is None else params
        u, sff, head = self.forward(batch, params)
        k_gold = batch.labels.max(axis=1) + 1
        lc, grad_r = contrastive_loss_batch(sff.r, batch.labels, batch.lengths, config)
        lh, dlogits = head_loss_batch(head, k_gold)
        B = batch.size
        loss = float(np.mean(lc + config.gamma * lh))
        parts = {"contrastive": lc, "head": lh}
        if not need_grads:
            return loss, parts, None
        grads, du = sff_backward_batch(sff, params, grad_r / B)
        head_grads, du_head = head_backward_batch(head, params, dlogits * (config.gamma / B))
        grads.update(head_grads)
        if TABLE in params:
            du_flat = (du + du_head)[batch.rows]
            grads[TABLE] = np.asarray(batch.pooling.T @ du_flat)
        return loss, parts, grads

    def represent(self, dialogues) -> list[np.ndarray]:
        """Unit-norm representation matrix of each dialogue."""
        batch = self.make_batch(dialogues)
        _, sff, _ = self.forward(batch)
        return sff.outputs()

    def session_distribution(self, dialogues) -> np.ndarray:
        batch = self.make_batch(dialogues)
        u = self.encode(batch)
        return head_forward_batch(u, batch.lengths, self.params).probs

    def copy(self) -> "DisentanglementModel":
        params = {name: value.copy() for name, value in self.params.items()}
        encoder = self.encoder
        if TABLE in params:
            vocab = self.encoder.vocab
            encoder = MeanPoolEncoder(TokenVocabulary(list(vocab.tokens), params[TABLE], vocab.unk_index))
            params[TABLE] = encoder.vocab.table
        return DisentanglementModel(params, encoder, self.dim, self.k_max, self.variant)


def build_encoder(dialogues, dim, seed=0, embeddings=None):
    """Precomputed vectors when ``embeddings`` is given, else a fresh token table."""
    if embeddings is not None:
        vectors = embeddings if isinstance(embeddings, dict) else None
        return PrecomputedEncoder(vectors) if vectors is not None else PrecomputedEncoder.from_file(embeddings)
    texts = (t for d in dialogues for t in d.texts)
    return MeanPoolEncoder(TokenVocabulary.build(texts, dim, seed=seed))

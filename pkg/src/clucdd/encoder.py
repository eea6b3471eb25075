"""Utterance encoders.

Two interchangeable sources of per-utterance vectors:

* :class:`MeanPoolEncoder` -- a trainable token table, mean-pooled per utterance.
* :class:`PrecomputedEncoder` -- vectors produced by an external model and
  read from a line-delimited JSON file ``{"id": str, "vector": [float, ...]}``.
"""

from __future__ import annotations

import json
import re
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from clucdd.exceptions import FormatError, ParseError, ValidationError

UNK = "<unk>"
VOCAB_MAGIC = int.from_bytes(b"CLVB", "little")
VOCAB_VERSION = 1
_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def split_tokens(text: str) -> list[str]:
    """Lowercase, split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class TokenVocabulary:
    """Token to row mapping plus the ``V x d`` embedding table."""

    tokens: list
    table: np.ndarray
    unk_index: int = 0

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2 or self.table.shape[0] != len(self.tokens):
            raise ValidationError(
                f"table shape {self.table.shape} does not match {len(self.tokens)} tokens"
            )
        if not np.all(np.isfinite(self.table)):
            raise ValidationError("embedding table contains non-finite values")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("duplicate token in vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @classmethod
    def build(cls, texts: Iterable[str], dim: int, seed=0, min_count: int = 1, init_scale: float = 0.05):
        counts = Counter(tok for text in texts for tok in split_tokens(text))
        tokens = [UNK] + sorted(t for t, c in counts.items() if c >= min_count and t != UNK)
        rng = np.random.default_rng(seed)
        table = rng.uniform(-init_scale, init_scale, size=(len(tokens), dim))
        return cls(tokens, table, 0)

    def tokenize(self, text: str) -> list[int]:
        idx = [self.index.get(tok, self.unk_index) for tok in split_tokens(text)]
        return idx or [self.unk_index]

    def save(self, tokens_path, table_path):
        with Path(tokens_path).open("w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.tokens):
                fh.write(json.dumps({"token": tok, "index": i}, ensure_ascii=False) + "\n")
        header = struct.pack("<IIII", VOCAB_MAGIC, VOCAB_VERSION, self.size, self.dim)
        Path(table_path).write_bytes(header + self.table.astype("<f4").tobytes())

    @classmethod
    def load(cls, tokens_path, table_path) -> "TokenVocabulary":
        entries = {}
        with Path(tokens_path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    tok, idx = str(rec["token"]), int(rec["index"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ParseError(tokens_path, lineno, f"bad vocabulary entry ({exc!r})") from None
                if idx in entries:
                    raise FormatError(f"duplicate vocabulary index {idx}")
                entries[idx] = tok
        if sorted(entries) != list(range(len(entries))):
            raise FormatError("vocabulary indices are not dense 0..V-1")
        blob = Path(table_path).read_bytes()
        if len(blob) < 16:
            raise FormatError("vocabulary table header truncated")
        magic, version, v, d = struct.unpack("<IIII", blob[:16])
        if magic != VOCAB_MAGIC:
            raise FormatError("vocabulary table has wrong magic bytes")
        if version != VOCAB_VERSION:
            raise FormatError(f"unsupported vocabulary table version {version}")
        if v != len(entries):
            raise FormatError(f"table has {v} rows but vocabulary lists {len(entries)} tokens")
        if len(blob) != 16 + 4 * v * d:
            raise FormatError("vocabulary table body has the wrong length")
        table = np.frombuffer(blob, dtype="<f4", offset=16).reshape(v, d).astype(np.float64)
        tokens = [entries[i] for i in range(v)]
        unk = tokens.index(UNK) if UNK in tokens else 0
        return cls(tokens, table, unk)


def tokenize(text: str, vocab: TokenVocabulary) -> list[int]:
    return vocab.tokenize(text)


def encode_utterance(tokens: Sequence[int], table: np.ndarray) -> np.ndarray:
    """Mean of the embedding rows of ``tokens``."""
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token list")
    return np.asarray(table)[np.asarray(tokens, dtype=np.int64)].mean(axis=0)


def pooling_matrix(token_lists: Sequence[Sequence[int]], vocab_size: int) -> sparse.csr_matrix:
    """Sparse ``n x V`` matrix whose product with the table mean-pools each row's tokens."""
    rows, cols, vals = [], [], []
    for i, toks in enumerate(token_lists):
        if len(toks) == 0:
            raise ValueError(f"utterance {i} has no tokens")
        w = 1.0 / len(toks)
        rows.extend([i] * len(toks))
        cols.extend(toks)
        vals.extend([w] * len(toks))
    # duplicates are summed by the csr constructor
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(token_lists), vocab_size))


class MeanPoolEncoder:
    """Trainable token-table encoder.

    ``prepare`` turns a dialogue into a cached pooling matrix; ``forward`` and
    ``backward`` are then a sparse product with the table and its transpose.
    """

    trainable = True

    def __init__(self, vocab: TokenVocabulary):
        self.vocab = vocab

    @property
    def dim(self) -> int:
        return self.vocab.dim

    def prepare(self, dialogue):
        return pooling_matrix([self.vocab.tokenize(t) for t in dialogue.texts], self.vocab.size)

    def forward(self, prepared, table=None) -> np.ndarray:
        table = self.vocab.table if table is None else table
        return np.asarray(prepared @ table)

    def backward(self, prepared, grad_u: np.ndarray) -> np.ndarray:
        return np.asarray(prepared.T @ grad_u)


def load_precomputed(path) -> dict[str, np.ndarray]:
    """Read ``{"id", "vector"}`` records into an id to vector map."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                uid = str(rec["id"])
                vec = np.asarray(rec["vector"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(path, lineno, f"bad embedding record ({exc!r})") from None
            if vec.ndim != 1 or vec.size == 0:
                raise FormatError(f"embedding for {uid!r} is not a non-empty vector")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise FormatError(f"embedding for {uid!r} has dimension {vec.size}, expected {dim}")
            if not np.all(np.isfinite(vec)):
                raise FormatError(f"embedding for {uid!r} contains non-finite values")
            if uid in vectors:
                raise FormatError(f"duplicate embedding id {uid!r}")
            vectors[uid] = vec
    return vectors


def write_precomputed(vectors: dict, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for uid, vec in vectors.items():
            fh.write(json.dumps({"id": uid, "vector": [float(x) for x in vec]}) + "\n")


class PrecomputedEncoder:
    """Looks utterance vectors up by id; has no trainable parameters."""

    trainable = False

    def __init__(self, vectors: dict[str, np.ndarray]):
        self.vectors = vectors
        self._dim = len(next(iter(vectors.values()))) if vectors else 0

    @classmethod
    def from_file(cls, path):
        return cls(load_precomputed(path))

    @property
    def dim(self) -> int:
        return self._dim

    def prepare(self, dialogue):
        try:
            return np.stack([self.vectors[u.id] for u in dialogue.utterances])
        except KeyError as exc:
            raise ValidationError(
                f"no precomputed embedding for utterance {exc.args[0]!r} in {dialogue.dialogue_id!r}"
            ) from None

    def forward(self, prepared, table=None) -> np.ndarray:
        return prepared

    def backward(self, prepared, grad_u):
        return None

"""Synthetic entangled dialogues with known sessions.

Each dialogue interleaves ``k`` sessions, each drawing words from its own
topic vocabulary (topics never repeat inside a dialogue) plus a shared noise
vocabulary.  With ``burstiness`` > 0 the session sequence is a sticky Markov
chain, so neighbouring utterances tend to share a session; ``ambiguous_rate``
then blanks a fraction of utterances down to pure noise, which only the
surrounding context can resolve.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from clucdd.corpus import Dialogue, Utterance
from clucdd.exceptions import ConfigError


@dataclass(frozen=True)
class SynthConfig:
    dialogues: int = 100
    n_min: int = 20
    n_max: int = 50
    k_min: int = 2
    k_max: int = 4
    vocab_per_session: int = 8
    noise_rate: float = 0.1
    n_topics: int = 12
    noise_vocab: int = 20
    len_min: int = 4
    len_max: int = 8
    burstiness: float = 0.0
    ambiguous_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.n_min <= self.n_max:
            raise ConfigError("need 2 <= n_min <= n_max")
        if not 1 <= self.k_min <= self.k_max <= self.n_min:
            raise ConfigError("need 1 <= k_min <= k_max <= n_min")
        if self.k_max > self.n_topics:
            raise ConfigError("n_topics must be at least k_max")
        if not 0.0 <= self.noise_rate < 1.0 or not 0.0 <= self.ambiguous_rate < 1.0:
            raise ConfigError("noise_rate and ambiguous_rate must lie in [0, 1)")
        if not 0.0 <= self.burstiness < 1.0:
            raise ConfigError("burstiness must lie in [0, 1)")
        if not 1 <= self.len_min <= self.len_max:
            raise ConfigError("need 1 <= len_min <= len_max")

    def to_dict(self) -> dict:
        return asdict(self)


def topic_word(topic: int, w: int) -> str:
    return f"t{topic}w{w}"


def noise_word(w: int) -> str:
    return f"noise{w}"


def _session_sequence(rng, n, k, burstiness):
    while True:
        if burstiness <= 0:
            seq = rng.integers(k, size=n)
        else:
            seq = np.empty(n, dtype=np.int64)
            seq[0] = rng.integers(k)
            for i in range(1, n):
                if rng.random() < burstiness:
                    seq[i] = seq[i - 1]
                else:
                    seq[i] = rng.integers(k)
        if len(np.unique(seq)) == k:
            return seq


def generate_dialogue(rng, cfg: SynthConfig, dialogue_id: str) -> Dialogue:
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    k = int(rng.integers(cfg.k_min, cfg.k_max + 1))
    topics = rng.choice(cfg.n_topics, size=k, replace=False)
    seq = _session_sequence(rng, n, k, cfg.burstiness)
    utts = []
    for i, s in enumerate(seq):
        length = int(rng.integers(cfg.len_min, cfg.len_max + 1))
        ambiguous = rng.random() < cfg.ambiguous_rate
        words = []
        for _ in range(length):
            if ambiguous or rng.random() < cfg.noise_rate:
                words.append(noise_word(int(rng.integers(cfg.noise_vocab))))
            else:
                words.append(topic_word(int(topics[s]), int(rng.integers(cfg.vocab_per_session))))
        utts.append(Utterance(f"{dialogue_id}-{i}", f"speaker{s}", " ".join(words), int(s)))
    return Dialogue(dialogue_id, tuple(utts))


def generate_corpus(cfg: SynthConfig, prefix: str = "syn") -> list[Dialogue]:
    rng = np.random.default_rng(cfg.seed)
    return [generate_dialogue(rng, cfg, f"{prefix}{i:05d}") for i in range(cfg.dialogues)]


def generate_splits(cfg: SynthConfig, train: int, dev: int, test: int):
    """Independent train/dev/test draws sharing one topic pool."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for name, count in (("train", train), ("dev", dev), ("test", test)):
        out.append([generate_dialogue(rng, cfg, f"{name}{i:05d}") for i in range(count)])
    return tuple(out)

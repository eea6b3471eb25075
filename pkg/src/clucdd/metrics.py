"""Disentanglement metrics: NMI, ARI, Loc3, one-to-one overlap, Shen-F.

Every function takes two label sequences of equal length (gold first) and
is invariant to renaming the session ids on either side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import comb

from clucdd.exceptions import ValidationError

METRIC_NAMES = ("nmi", "ari", "loc3", "one_to_one", "shen_f")


def _labels(x) -> np.ndarray:
    return np.asarray(list(getattr(x, "labels", x)), dtype=np.int64)


def _pair(gold, pred):
    g, p = _labels(gold), _labels(pred)
    if g.shape != p.shape:
        raise ValidationError(f"label length mismatch: {g.size} gold vs {p.size} predicted")
    return g, p


def contingency(gold, pred) -> np.ndarray:
    """Overlap counts ``n_ij`` between gold session i and predicted session j."""
    g, p = _pair(gold, pred)
    _, gi = np.unique(g, return_inverse=True)
    _, pj = np.unique(p, return_inverse=True)
    table = np.zeros((gi.max(initial=-1) + 1, pj.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (gi, pj), 1)
    return table


def _entropy(counts) -> float:
    counts = counts[counts > 0]
    prob = counts / counts.sum()
    return float(-np.sum(prob * np.log(prob)))


def _same_partition(table) -> bool:
    nz = table > 0
    return bool(np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1))


def nmi(gold, pred) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    table = contingency(gold, pred)
    n = table.sum()
    if n == 0:
        raise ValidationError("cannot score empty labelings")
    h_g = _entropy(table.sum(axis=1))
    h_p = _entropy(table.sum(axis=0))
    if h_g == 0.0 and h_p == 0.0:
        return 1.0
    if h_g == 0.0 or h_p == 0.0:
        return 0.0
    if _same_partition(table):
        return 1.0
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float(np.sum(table[nz] / n * np.log(table[nz] * n / outer[nz])))
    return float(np.clip(mi / (0.5 * (h_g + h_p)), 0.0, 1.0))


def ari(gold, pred) -> float:
    table = contingency(gold, pred)
    n = int(table.sum())
    sum_cells = comb(table, 2).sum()
    sum_rows = comb(table.sum(axis=1), 2).sum()
    sum_cols = comb(table.sum(axis=0), 2).sum()
    total = comb(n, 2)
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        # only reachable when both labelings are all-singletons or both one-cluster
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def loc3(gold, pred, window: int = 3) -> float:
    """Agreement on same/different session over pairs at index distance <= 3."""
    g, p = _pair(gold, pred)
    n = g.size
    if n < 2:
        raise ValidationError("loc3 needs at least two utterances")
    agree = total = 0
    for offset in range(1, min(window, n - 1) + 1):
        same_g = g[offset:] == g[:-offset]
        same_p = p[offset:] == p[:-offset]
        agree += int(np.sum(same_g == same_p))
        total += n - offset
    return agree / total


def one_to_one(gold, pred) -> float:
    """Best one-to-one session matching, scored by matched utterances over n."""
    table = contingency(gold, pred)
    n = table.sum()
    # rectangular input: unmatched sessions on the larger side get zero weight
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / n)


def shen_f(gold, pred) -> float:
    """Gold-size-weighted best F-score of each gold session against predictions."""
    table = contingency(gold, pred).astype(np.float64)
    n = table.sum()
    n_gold = table.sum(axis=1, keepdims=True)
    n_pred = table.sum(axis=0, keepdims=True)
    f = 2.0 * table / (n_gold + n_pred)
    # weight by counts and divide once so identical partitions give exactly 1.0
    return float(np.sum(n_gold[:, 0] * f.max(axis=1)) / n)


METRICS = {
    "nmi": nmi,
    "ari": ari,
    "loc3": loc3,
    "one_to_one": one_to_one,
    "shen_f": shen_f,
}


@dataclass
class MetricReport:
    nmi: float
    ari: float
    loc3: float
    one_to_one: float
    shen_f: float
    per_dialogue: list = field(default_factory=list)
    dialogue_ids: list = field(default_factory=list)

    def summary(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_json(self) -> dict:
        rows = []
        for i, scores in enumerate(self.per_dialogue):
            did = self.dialogue_ids[i] if i < len(self.dialogue_ids) else str(i)
            rows.append({"dialogue_id": did, **scores})
        return {"corpus": self.summary(), "per_dialogue": rows}


def score(gold, pred) -> dict:
    return {name: fn(gold, pred) for name, fn in METRICS.items()}


def evaluate_corpus(pairs, dialogue_ids=None) -> MetricReport:
    """Per-dialogue metrics and their unweighted mean."""
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("cannot evaluate an empty corpus")
    rows = [score(g, p) for g, p in pairs]
    means = {name: float(np.mean([r[name] for r in rows])) for name in METRIC_NAMES}
    ids = list(dialogue_ids) if dialogue_ids is not None else [str(i) for i in range(len(rows))]
    return MetricReport(per_dialogue=rows, dialogue_ids=ids, **means)


__all__ = [
    "METRIC_NAMES",
    "MetricReport",
    "ari",
    "contingency",
    "evaluate_corpus",
    "loc3",
    "nmi",
    "one_to_one",
    "score",
    "shen_f",
]

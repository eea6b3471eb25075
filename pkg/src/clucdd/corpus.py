"""Chat corpora: dialogue records, reply graphs, windowing and splits.

Dialogues are stored one per line as UTF-8 JSON::

    {"dialogue_id": str,
     "utterances": [{"id": str, "speaker": str, "text": str,
                     "session": int | null, "reply_to": [str] | null}]}

Session-labeled corpora fill ``session``; reply-annotated logs leave it null
and populate ``reply_to`` instead.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from clucdd.exceptions import ConfigError, ParseError, ValidationError

logger = logging.getLogger(__name__)


def canonicalize(labels: Iterable[int]) -> np.ndarray:
    """Relabel sessions ``0..k-1`` in order of first appearance."""
    mapping: dict = {}
    out = []
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return np.asarray(out, dtype=np.int64)


@dataclass(frozen=True)
class SessionLabeling:
    """Per-utterance session assignment for one dialogue."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(int(x) for x in self.labels)
        if any(x < 0 for x in labels):
            raise ValidationError("session labels must be non-negative")
        if labels and set(labels) != set(range(max(labels) + 1)):
            raise ValidationError(f"labels do not cover 0..k-1: {sorted(set(labels))}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_raw(cls, labels: Iterable[int]) -> "SessionLabeling":
        return cls(tuple(canonicalize(labels).tolist()))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def k(self) -> int:
        return len(set(self.labels))

    @property
    def sizes(self) -> list[int]:
        """Utterance count ``m_i`` of each session, indexed by label."""
        counts = Counter(self.labels)
        return [counts[i] for i in range(self.k)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)


@dataclass(frozen=True)
class Utterance:
    id: str
    speaker: str = ""
    text: str = ""
    session: int | None = None
    reply_to: tuple | None = None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "speaker": self.speaker,
            "text": self.text,
            "session": self.session,
            "reply_to": None if self.reply_to is None else list(self.reply_to),
        }


@dataclass(frozen=True)
class Dialogue:
    """An ordered sequence of utterances, optionally with gold sessions.

    Session labels, when present, are canonicalized on construction.
    """

    dialogue_id: str
    utterances: tuple = field(default_factory=tuple)

    def __post_init__(self):
        utts = tuple(self.utterances)
        ids = [u.id for u in utts]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise ValidationError(f"dialogue {self.dialogue_id!r}: duplicate utterance id {dup!r}")
        labeled = [u.session is not None for u in utts]
        if any(labeled) and not all(labeled):
            raise ValidationError(f"dialogue {self.dialogue_id!r} is partially session-labeled")
        if utts and all(labeled):
            if any(int(u.session) < 0 for u in utts):
                raise ValidationError(f"dialogue {self.dialogue_id!r}: negative session label")
            canon = canonicalize(int(u.session) for u in utts)
            utts = tuple(replace(u, session=int(c)) for u, c in zip(utts, canon))
        object.__setattr__(self, "utterances", utts)

    @property
    def n(self) -> int:
        return len(self.utterances)

    @property
    def is_labeled(self) -> bool:
        return bool(self.utterances) and self.utterances[0].session is not None

    @property
    def labeling(self) -> SessionLabeling | None:
        if not self.is_labeled:
            return None
        return SessionLabeling(tuple(u.session for u in self.utterances))

    @property
    def k(self) -> int | None:
        lab = self.labeling
        return None if lab is None else lab.k

    @property
    def texts(self) -> list[str]:
        return [u.text for u in self.utterances]

    def with_labels(self, labels: Sequence[int]) -> "Dialogue":
        if len(labels) != self.n:
            raise ValidationError(
                f"dialogue {self.dialogue_id!r}: {len(labels)} labels for {self.n} utterances"
            )
        utts = tuple(replace(u, session=int(s)) for u, s in zip(self.utterances, labels))
        return Dialogue(self.dialogue_id, utts)

    def reply_graph(self) -> "ReplyGraph":
        edges = []
        for u in self.utterances:
            for parent in u.reply_to or ():
                edges.append((u.id, parent))
        return ReplyGraph(tuple(u.id for u in self.utterances), tuple(edges))

    def to_record(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "utterances": [u.to_record() for u in self.utterances],
        }

    @classmethod
    def from_record(cls, record: dict) -> "Dialogue":
        if not isinstance(record, dict) or "utterances" not in record:
            raise ValidationError("record must be an object with an 'utterances' list")
        utts = []
        for raw in record["utterances"]:
            reply = raw.get("reply_to")
            session = raw.get("session")
            if session is not None and (isinstance(session, bool) or not isinstance(session, int)):
                raise ValidationError(f"session label must be an integer, got {session!r}")
            utts.append(
                Utterance(
                    id=str(raw["id"]),
                    speaker=str(raw.get("speaker", "")),
                    text=str(raw.get("text", "")),
                    session=session,
                    reply_to=None if reply is None else tuple(str(r) for r in reply),
                )
            )
        return cls(str(record.get("dialogue_id", "")), tuple(utts))


@dataclass(frozen=True)
class ReplyGraph:
    """Reply-to annotation: ``(child_id, parent_id)`` edges over utterance ids."""

    nodes: tuple
    edges: tuple

    def validate(self, check_order: bool = True):
        position = {node: i for i, node in enumerate(self.nodes)}
        for child, parent in self.edges:
            for node in (child, parent):
                if node not in position:
                    raise ValidationError(f"reply edge references unknown utterance {node!r}")
            if check_order and position[parent] > position[child]:
                raise ValidationError(f"utterance {child!r} replies to later utterance {parent!r}")
        return position


def reply_graph_to_sessions(graph: ReplyGraph, node_order: Sequence[str] | None = None) -> SessionLabeling:
    """Sessions are connected components of the undirected reply graph.

    Edge direction is irrelevant here, so only unknown ids are rejected.
    """
    position = graph.validate(check_order=False)
    order = list(graph.nodes if node_order is None else node_order)
    if sorted(order) != sorted(graph.nodes):
        raise ValidationError("node_order must be a permutation of the graph nodes")
    n = len(graph.nodes)
    if n == 0:
        return SessionLabeling(())
    rows = [position[c] for c, _ in graph.edges]
    cols = [position[p] for _, p in graph.edges]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    return SessionLabeling.from_raw(comp[position[node]] for node in order)


def window_dialogues(log: Dialogue, window: int = 50) -> list[Dialogue]:
    """Cut a labeled log into consecutive non-overlapping fixed-size dialogues.

    The trailing remainder and windows holding a single session are dropped.
    Reply edges leaving a window are discarded.
    """
    if window < 2:
        raise ConfigError("window must be at least 2")
    if not log.is_labeled:
        raise ValidationError(f"log {log.dialogue_id!r} has no session labels")
    out = []
    for start in range(0, log.n - window + 1, window):
        chunk = log.utterances[start:start + window]
        ids = {u.id for u in chunk}
        labels = canonicalize(u.session for u in chunk)
        if labels.max() + 1 < 2:
            continue
        utts = tuple(
            replace(
                u,
                session=int(s),
                reply_to=None if u.reply_to is None else tuple(p for p in u.reply_to if p in ids),
            )
            for u, s in zip(chunk, labels)
        )
        out.append(Dialogue(f"{log.dialogue_id}#{start}", utts))
    return out


def split_corpus(dialogues: Sequence[Dialogue], fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded disjoint train/dev/test partition; input order kept within splits."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigError("expected three fractions (train, dev, test)")
    if any(not 0.0 < f < 1.0 for f in fractions):
        raise ConfigError(f"fractions must lie in (0, 1): {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1: {fractions}")
    n = len(dialogues)
    n_dev = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_dev - n_test
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.split(perm, [n_train, n_train + n_dev])
    return tuple([dialogues[i] for i in sorted(part.tolist())] for part in parts)


def _iter_records(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON ({exc.msg})") from None


def read_dialogues(path) -> list[Dialogue]:
    """Read dialogue records; labeled and unlabeled dialogues are both accepted."""
    out = []
    for lineno, record in _iter_records(path):
        try:
            dialogue = Dialogue.from_record(record)
        except (KeyError, TypeError) as exc:
            raise ParseError(path, lineno, f"malformed dialogue record ({exc!r})") from None
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if dialogue.n < 2:
            raise ValidationError(f"{path}:{lineno}: dialogue {dialogue.dialogue_id!r} has fewer than 2 utterances")
        out.append(dialogue)
    return out


def load_session_labeled(path) -> list[Dialogue]:
    dialogues = read_dialogues(path)
    for d in dialogues:
        if not d.is_labeled:
            raise ValidationError(f"dialogue {d.dialogue_id!r} has no session labels")
    return dialogues


def load_reply_annotated(path) -> list[Dialogue]:
    """Read reply-annotated logs and attach sessions derived from their reply graphs."""
    out = []
    for d in read_dialogues(path):
        d.reply_graph().validate()
        sessions = reply_graph_to_sessions(d.reply_graph())
        out.append(d.with_labels(sessions.labels))
    return out


def write_dialogues(dialogues: Iterable[Dialogue], path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(d.to_record(), ensure_ascii=False) + "\n")


def session_histogram(dialogues: Iterable[Dialogue]) -> dict[str, int]:
    counts = Counter(d.k for d in dialogues if d.is_labeled)
    return {str(k): counts[k] for k in sorted(counts)}

"""Scikit-learn style front end over training and inference.

``X`` is always a sequence of dialogues (``Dialogue`` objects or their JSON
records); ``y``, when given, is one session-label sequence per dialogue.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from clucdd.corpus import Dialogue
from clucdd.exceptions import ConfigError, ValidationError
from clucdd.inference import predict_sessions
from clucdd.metrics import evaluate_corpus
from clucdd.trainer import TrainConfig, load_checkpoint, save_checkpoint, train


def check_dialogues(X, y=None, require_labels=False) -> list[Dialogue]:
    """Coerce ``X`` (and optional ``y``) into a list of validated dialogues."""
    if isinstance(X, (Dialogue, dict, str)) or not hasattr(X, "__iter__"):
        raise ValidationError("X must be a sequence of dialogues")
    out = []
    for item in X:
        if isinstance(item, dict):
            item = Dialogue.from_record(item)
        elif not isinstance(item, Dialogue):
            raise ValidationError(f"expected Dialogue or record, got {type(item).__name__}")
        if item.n < 2:
            raise ValidationError(f"dialogue {item.dialogue_id!r} has fewer than 2 utterances")
        out.append(item)
    if y is not None:
        y = list(y)
        if len(y) != len(out):
            raise ValidationError(f"{len(y)} label sequences for {len(out)} dialogues")
        out = [d.with_labels([int(v) for v in labels]) for d, labels in zip(out, y)]
    if require_labels:
        for d in out:
            if not d.is_labeled:
                raise ValidationError(f"dialogue {d.dialogue_id!r} is not session-labeled")
    return out


def check_is_fitted(estimator):
    if getattr(estimator, "model_", None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")


class CluCDD(BaseEstimator):
    """Contrastive utterance representations plus per-dialogue clustering.

    ``fit`` trains the fusion network and the session-count head; ``transform``
    returns unit-norm representations; ``predict`` returns session labels.
    """

    def __init__(
        self,
        dim=768,
        k_max=4,
        variant="full",
        margin=1.0,
        gamma=0.1,
        reduction="sum",
        learning_rate=5e-4,
        epochs=10,
        batch_size=4,
        freeze_encoder=False,
        clip_norm=None,
        method="kmeans",
        k_source="head",
        cluster_params=None,
        embeddings=None,
        random_state=0,
    ):
        self.dim = dim
        self.k_max = k_max
        self.variant = variant
        self.margin = margin
        self.gamma = gamma
        self.reduction = reduction
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.freeze_encoder = freeze_encoder
        self.clip_norm = clip_norm
        self.method = method
        self.k_source = k_source
        self.cluster_params = cluster_params
        self.embeddings = embeddings
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.random_state,
            freeze_encoder=self.freeze_encoder,
            margin=self.margin,
            gamma=self.gamma,
            reduction=self.reduction,
            clip_norm=self.clip_norm,
            dim=self.dim,
            k_max=self.k_max,
            variant=self.variant,
        )

    def fit(self, X, y=None, dev=None):
        """Train on labeled dialogues; with ``dev`` the best-dev epoch is kept."""
        dialogues = check_dialogues(X, y, require_labels=True)
        dev_dialogues = check_dialogues(dev, require_labels=True) if dev is not None else None
        result = train(dialogues, self._train_config(), dev_dialogues, embeddings=self.embeddings)
        self.state_ = result.state
        self.model_ = result.best
        self.best_epoch_ = result.best_epoch
        self.log_ = result.log
        self.n_features_ = self.dim
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self)
        return self.model_.represent(check_dialogues(X))

    def predict_k(self, X) -> np.ndarray:
        check_is_fitted(self)
        probs = self.model_.session_distribution(check_dialogues(X))
        return np.argmax(probs, axis=1) + 1

    def predict(self, X, k=None) -> list[np.ndarray]:
        """Canonical session labels for each dialogue."""
        check_is_fitted(self)
        if self.k_source == "given" and k is None:
            raise ConfigError("k_source 'given' needs k")
        labelings = predict_sessions(
            self.model_,
            check_dialogues(X, require_labels=self.k_source == "gold"),
            method=self.method,
            k_source=self.k_source,
            k=k,
            seed=self.random_state,
            **(self.cluster_params or {}),
        )
        return [lab.as_array() for lab in labelings]

    def evaluate(self, X, y=None):
        """Metric report of ``predict`` against gold sessions."""
        dialogues = check_dialogues(X, y, require_labels=True)
        preds = self.predict(dialogues)
        return evaluate_corpus(
            [(d.labeling, p) for d, p in zip(dialogues, preds)],
            [d.dialogue_id for d in dialogues],
        )

    def score(self, X, y=None) -> float:
        """Mean Shen-F against gold sessions."""
        return self.evaluate(X, y).shen_f

    def save(self, path):
        check_is_fitted(self)
        save_checkpoint(self.state_, path, model=self.model_)

    @classmethod
    def load(cls, path, embeddings=None, **params) -> "CluCDD":
        state = load_checkpoint(path, embeddings=embeddings)
        cfg = state.config
        est = cls(
            dim=cfg.dim, k_max=cfg.k_max, variant=cfg.variant, margin=cfg.margin,
            gamma=cfg.gamma, reduction=cfg.reduction, learning_rate=cfg.learning_rate,
            epochs=cfg.epochs, batch_size=cfg.batch_size, freeze_encoder=cfg.freeze_encoder,
            clip_norm=cfg.clip_norm, embeddings=embeddings, random_state=cfg.seed,
        )
        est.set_params(**params)
        est.state_ = state
        est.model_ = state.model
        est.best_epoch_ = state.epoch
        est.log_ = []
        est.n_features_ = cfg.dim
        return est

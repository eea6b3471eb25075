"""Adam training loop, parameter freezing and binary checkpoints.

Checkpoint layout (all integers and floats little-endian)::

    magic      4 bytes   b"CLCK"
    header     <IIIIIQ   version, d, V, k_max, flags, step
    meta_len   <I        length of the UTF-8 JSON metadata block
    meta       JSON      config, variant, epoch, vocabulary tokens, tensor manifest
    tensors    <f8       parameters in manifest order
    moments    <f8       Adam first moments, then second moments, moment-manifest order
    crc32      <I        over everything above

``flags``: bit 0 = trainable token table present, bit 1 = Adam moments present.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from clucdd.encoder import MeanPoolEncoder, PrecomputedEncoder, TokenVocabulary
from clucdd.exceptions import ConfigError, FormatError, TrainingError, ValidationError
from clucdd.inference import evaluate_model
from clucdd.model import TABLE, DisentanglementModel, build_encoder
from clucdd.objective import REDUCTIONS, ContrastiveConfig
from clucdd.sff import VARIANTS

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"CLCK"
CKPT_VERSION = 1
FLAG_TABLE = 1
FLAG_MOMENTS = 2
ENV_PREFIX = "CLUCDD_"

# canonical tensor order for checkpoints
PARAM_ORDER = (
    TABLE,
    "fc.W", "fc.b",
    "bilstm.fwd.Wx", "bilstm.fwd.Wh", "bilstm.fwd.b",
    "bilstm.bwd.Wx", "bilstm.bwd.Wh", "bilstm.bwd.b",
    "ffn.W", "ffn.b",
    "head.lstm.Wx", "head.lstm.Wh", "head.lstm.b",
    "head.out.W", "head.out.b",
)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 4
    seed: int = 0
    freeze_encoder: bool = False
    margin: float = 1.0
    gamma: float = 0.1
    reduction: str = "sum"
    clip_norm: float | None = None
    dim: int = 768
    k_max: int = 4
    variant: str = "full"
    dev_k_source: str = "gold"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}")
        if self.dev_k_source not in ("gold", "head"):
            raise ConfigError("dev_k_source must be 'gold' or 'head'")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive when set")
        self.contrastive  # validates margin

    @property
    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig(self.margin, self.gamma, self.reduction)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**values)

    @classmethod
    def resolve(cls, file_values=None, env=None, overrides=None) -> "TrainConfig":
        """Merge sources with precedence overrides > environment > file > defaults."""
        values = dict(file_values or {})
        env = os.environ if env is None else env
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for name in types:
            raw = env.get(ENV_PREFIX + name.upper())
            if raw is not None:
                values[name] = _coerce(name, raw, getattr(cls(), name))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(values)


def _coerce(name, raw, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            return None if raw.lower() in ("", "none") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {ENV_PREFIX}{name.upper()}={raw!r}") from None


def adam_step(params, grads, moments, t, config: TrainConfig):
    """One bias-corrected Adam update.

    Tensors absent from ``grads`` are frozen: copied through unchanged and
    given no moments.  Returns new ``(params, moments)`` dicts; inputs are
    not modified.
    """
    new_params = dict(params)
    new_moments = dict(moments)
    b1, b2 = config.beta1, config.beta2
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in tensor {name!r}")
        m, v = moments.get(name, (np.zeros_like(g), np.zeros_like(g)))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = params[name] - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        new_moments[name] = (m, v)
    return new_params, new_moments


def clip_gradients(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / (total + 1e-12)
    return {name: g * scale for name, g in grads.items()}


@dataclass
class TrainState:
    """Everything needed to resume training bit-for-bit."""

    model: DisentanglementModel
    config: TrainConfig
    moments: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0

    def trainable_names(self) -> list[str]:
        names = [n for n in PARAM_ORDER if n in self.model.params]
        if self.config.freeze_encoder:
            names = [n for n in names if n != TABLE]
        return names


@dataclass
class TrainResult:
    state: TrainState
    best: DisentanglementModel
    best_epoch: int
    log: list


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(train_dialogues, config: TrainConfig, dev_dialogues=None, embeddings=None, state: TrainState | None = None):
    """Fit the full network with Adam; returns the final state and the best-dev model.

    Per-epoch dialogue order is a permutation seeded by ``(seed, epoch)`` so a
    resumed run replays exactly the same batches.
    """
    train_dialogues = list(train_dialogues)
    if not train_dialogues:
        raise ValidationError("training corpus is empty")
    for d in train_dialogues:
        if not d.is_labeled:
            raise ValidationError(f"training dialogue {d.dialogue_id!r} is not session-labeled")
        if d.k > config.k_max:
            raise ValidationError(
                f"dialogue {d.dialogue_id!r} has {d.k} sessions, above k_max={config.k_max}"
            )
    if state is None:
        encoder = build_encoder(train_dialogues, config.dim, seed=config.seed, embeddings=embeddings)
        model = DisentanglementModel.initialize(encoder, config.dim, config.k_max, config.variant, seed=config.seed)
        state = TrainState(model, config)
    model = state.model
    prepared = [model.encoder.prepare(d) for d in train_dialogues]
    contrastive = config.contrastive
    trainable = state.trainable_names()
    log = []
    best, best_epoch, best_score = model.copy(), state.epoch, -np.inf
    for epoch in range(state.epoch, config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        losses, lc_sum, lh_sum = [], 0.0, 0.0
        for idx in _batches(len(train_dialogues), config.batch_size, rng):
            batch = model.make_batch([train_dialogues[i] for i in idx], [prepared[i] for i in idx])
            loss, parts, grads = model.loss_and_grads(batch, contrastive)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at step {state.step}")
            grads = {n: grads[n] for n in trainable}
            if config.clip_norm is not None:
                grads = clip_gradients(grads, config.clip_norm)
            state.step += 1
            model.params, state.moments = adam_step(model.params, grads, state.moments, state.step, config)
            losses.append(loss)
            lc_sum += float(parts["contrastive"].sum())
            lh_sum += float(parts["head"].sum())
        state.epoch = epoch + 1
        entry = {
            "epoch": state.epoch,
            "step": state.step,
            "loss": float(np.mean(losses)),
            "contrastive": lc_sum / len(train_dialogues),
            "head": lh_sum / len(train_dialogues),
        }
        if dev_dialogues:
            report = evaluate_model(model, dev_dialogues, k_source=config.dev_k_source, seed=config.seed)
            entry["dev"] = report.summary()
            # ties go to the later epoch: gold-k Shen-F saturates before the head is trained
            if report.shen_f >= best_score:
                best, best_epoch, best_score = model.copy(), state.epoch, report.shen_f
        logger.info("epoch %d loss %.5f%s", state.epoch, entry["loss"],
                    f" dev shen_f {entry['dev']['shen_f']:.4f}" if "dev" in entry else "")
        log.append(entry)
    if not dev_dialogues:
        best, best_epoch = model.copy(), state.epoch
    return TrainResult(state, best, best_epoch, log)


# --- checkpoints ---------------------------------------------------------

def save_checkpoint(state: TrainState, path, model: DisentanglementModel | None = None):
    """Write ``model`` (default: the state's own) with the state's optimizer data."""
    model = state.model if model is None else model
    names = [n for n in PARAM_ORDER if n in model.params]
    moment_names = [n for n in names if n in state.moments]
    vocab = model.vocab
    meta = {
        "config": state.config.to_dict(),
        "config_sha256": state.config.digest(),
        "variant": model.variant,
        "epoch": state.epoch,
        "tokens": vocab.tokens if vocab is not None else None,
        "unk_index": vocab.unk_index if vocab is not None else None,
        "tensors": [[n, list(model.params[n].shape)] for n in names],
        "moments": moment_names,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    flags = (FLAG_TABLE if TABLE in model.params else 0) | (FLAG_MOMENTS if moment_names else 0)
    V = vocab.size if vocab is not None else 0
    parts = [
        CKPT_MAGIC,
        struct.pack("<IIIIIQ", CKPT_VERSION, model.dim, V, model.k_max, flags, state.step),
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
    ]
    parts += [np.ascontiguousarray(model.params[n], dtype="<f8").tobytes() for n in names]
    parts += [np.ascontiguousarray(state.moments[n][0], dtype="<f8").tobytes() for n in moment_names]
    parts += [np.ascontiguousarray(state.moments[n][1], dtype="<f8").tobytes() for n in moment_names]
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path, embeddings=None) -> TrainState:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Models trained on precomputed vectors need ``embeddings`` (a path or an
    id-to-vector map) to encode new dialogues.
    """
    blob = Path(path).read_bytes()
    head_len = 4 + struct.calcsize("<IIIIIQ") + 4
    if len(blob) < head_len + 4:
        raise FormatError("checkpoint truncated")
    if blob[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint: wrong magic bytes")
    version, dim, V, k_max, flags, step = struct.unpack_from("<IIIIIQ", blob, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    (meta_len,) = struct.unpack_from("<I", blob, head_len - 4)
    if head_len + meta_len > len(body):
        raise FormatError("checkpoint truncated")
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint corrupt or truncated: checksum mismatch")
    try:
        meta = json.loads(body[head_len:head_len + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("checkpoint metadata unreadable") from None
    offset = head_len + meta_len

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(body):
            raise FormatError("checkpoint truncated")
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
        return arr

    params = {name: take(tuple(shape)) for name, shape in meta["tensors"]}
    shapes = {name: tuple(shape) for name, shape in meta["tensors"]}
    firsts = {n: take(shapes[n]) for n in meta["moments"]}
    moments = {n: (firsts[n], take(shapes[n])) for n in meta["moments"]}
    if offset != len(body):
        raise FormatError("checkpoint has trailing bytes")

    config = TrainConfig.from_dict(meta["config"])
    if flags & FLAG_TABLE:
        vocab = TokenVocabulary(meta["tokens"], params[TABLE], meta["unk_index"])
        params[TABLE] = vocab.table
        encoder = MeanPoolEncoder(vocab)
    elif embeddings is not None:
        encoder = PrecomputedEncoder(embeddings) if isinstance(embeddings, dict) else PrecomputedEncoder.from_file(embeddings)
    else:
        encoder = PrecomputedEncoder({})
    model = DisentanglementModel(params, encoder, dim, k_max, meta["variant"])
    return TrainState(model, config, moments, step, meta["epoch"])

"""Sequential feature fusion: FC projection, Bi-LSTM, ReLU feed-forward, L2 norm.

For a dialogue of pooled utterance vectors ``u_1..u_n``::

    v_i = W_fc u_i + b_fc
    h_1..h_n = [forward LSTM ; backward LSTM](v_1..v_n)     (d/2 each)
    r_i = normalize(relu(W_ffn h_i + b_ffn))

Two ablated variants share the code path: ``"no_bilstm"`` feeds ``v`` straight
into the feed-forward layer, and ``"no_sff"`` only L2-normalizes the encoder
output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clucdd.exceptions import ConfigError
from clucdd.lstm import init_lstm, lstm_backward, lstm_forward, reverse_index, reverse_padded

NORM_EPS = 1e-12
VARIANTS = ("full", "no_bilstm", "no_sff")


def init_sff_params(dim: int, rng, variant: str = "full") -> dict:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown SFF variant {variant!r}; expected one of {VARIANTS}")
    if dim % 2:
        raise ConfigError(f"model dimension must be even, got {dim}")
    if variant == "no_sff":
        return {}
    scale = 1.0 / np.sqrt(dim)
    params = {
        "fc.W": rng.uniform(-scale, scale, size=(dim, dim)),
        "fc.b": np.zeros(dim),
    }
    if variant == "full":
        params.update(init_lstm(rng, dim, dim // 2, scale, prefix="bilstm.fwd."))
        params.update(init_lstm(rng, dim, dim // 2, scale, prefix="bilstm.bwd."))
    params["ffn.W"] = rng.uniform(-scale, scale, size=(dim, dim))
    params["ffn.b"] = np.zeros(dim)
    return params


def l2_normalize(a):
    """Row-wise ``a / (||a|| + eps)``; all-zero rows stay zero."""
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    return a / (norm + NORM_EPS), norm


def l2_normalize_backward(dr, a, norm):
    s = norm + NORM_EPS
    safe = np.where(norm > 0, norm, 1.0)
    proj = np.sum(a * dr, axis=-1, keepdims=True)
    return dr / s - a * proj / (s * s * safe)


def _lstm(params, prefix, x):
    return lstm_forward(x, params[prefix + "Wx"], params[prefix + "Wh"], params[prefix + "b"])


def bilstm_batch(v, lengths, params):
    """Both directions over padded ``v``; returns ``(B, T, d)`` and a cache."""
    T = v.shape[1]
    rev = reverse_index(lengths, T)
    hf, cache_f = _lstm(params, "bilstm.fwd.", v)
    hb_rev, cache_b = _lstm(params, "bilstm.bwd.", reverse_padded(v, rev))
    h = np.concatenate([hf, reverse_padded(hb_rev, rev)], axis=-1)
    return h, (rev, cache_f, cache_b)


def bilstm_backward_batch(dh, cache, grads):
    rev, cache_f, cache_b = cache
    half = dh.shape[-1] // 2
    dv_f, gf = lstm_backward(dh[..., :half], cache_f)
    dv_b_rev, gb = lstm_backward(reverse_padded(dh[..., half:], rev), cache_b)
    for name, g in gf.items():
        grads["bilstm.fwd." + name] = g
    for name, g in gb.items():
        grads["bilstm.bwd." + name] = g
    return dv_f + reverse_padded(dv_b_rev, rev)


@dataclass
class SffActivations:
    """Intermediate tensors of one batched forward pass.

    All arrays are ``(B, T, d)``; rows at or beyond a sequence's length are
    zero in ``r``.
    """

    u: np.ndarray
    v: np.ndarray | None
    h: np.ndarray | None
    z: np.ndarray | None
    a: np.ndarray
    norm: np.ndarray
    r: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    variant: str
    lstm_cache: tuple | None = None

    def outputs(self) -> list:
        """Per-dialogue ``n x d`` slices of ``r``."""
        return [self.r[b, :n] for b, n in enumerate(self.lengths)]


def sff_forward_batch(u, lengths, params, variant="full") -> SffActivations:
    lengths = np.asarray(lengths)
    B, T, d = u.shape
    mask = (np.arange(T)[None, :] < lengths[:, None])[..., None]
    if variant == "no_sff":
        a = u * mask
        r, norm = l2_normalize(a)
        return SffActivations(u, None, None, None, a, norm, r, mask, lengths, variant)
    if params["fc.W"].shape != (d, d):
        raise ValueError(f"embedding dimension {d} does not match parameters {params['fc.W'].shape}")
    v = (u @ params["fc.W"].T + params["fc.b"]) * mask
    cache = None
    if variant == "full":
        h, cache = bilstm_batch(v, lengths, params)
    else:
        h = v
    z = h @ params["ffn.W"].T + params["ffn.b"]
    a = np.maximum(z, 0.0) * mask
    r, norm = l2_normalize(a)
    return SffActivations(u, v, h, z, a, norm, r, mask, lengths, variant, cache)


def sff_backward_batch(act: SffActivations, params, grad_r):
    """Returns ``(grads, grad_u)`` for an upstream gradient on ``r``."""
    da = l2_normalize_backward(grad_r, act.a, act.norm) * act.mask
    grads = {}
    if act.variant == "no_sff":
        return grads, da
    dz = da * (act.z > 0)
    B, T, d = dz.shape
    dz2 = dz.reshape(B * T, d)
    grads["ffn.W"] = dz2.T @ act.h.reshape(B * T, d)
    grads["ffn.b"] = dz2.sum(axis=0)
    dh = dz @ params["ffn.W"]
    if act.variant == "full":
        dv = bilstm_backward_batch(dh, act.lstm_cache, grads)
    else:
        dv = dh
    dv = dv * act.mask
    dv2 = dv.reshape(B * T, d)
    grads["fc.W"] = dv2.T @ act.u.reshape(B * T, d)
    grads["fc.b"] = dv2.sum(axis=0)
    du = dv @ params["fc.W"]
    return grads, du


# Single-dialogue entry points over ``n x d`` matrices.

def fc_project(u, params):
    return params["fc.W"] @ np.asarray(u) + params["fc.b"]


def bilstm_forward(v, params):
    v = np.asarray(v, dtype=np.float64)
    h, _ = bilstm_batch(v[None], [v.shape[0]], params)
    return h[0]


def ffn_normalize(h, params):
    a = np.maximum(params["ffn.W"] @ np.asarray(h) + params["ffn.b"], 0.0)
    r, _ = l2_normalize(a)
    return r


def sff_forward(embeddings, params, variant="full") -> SffActivations:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ValueError("embeddings must be an n x d matrix")
    return sff_forward_batch(embeddings[None], [embeddings.shape[0]], params, variant)


def sff_backward(activations: SffActivations, params, grad_r):
    grad_r = np.asarray(grad_r, dtype=np.float64)
    if grad_r.ndim == 2:
        grad_r = grad_r[None]
    grads, du = sff_backward_batch(activations, params, grad_r)
    return grads, du[0]

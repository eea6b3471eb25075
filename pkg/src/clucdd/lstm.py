"""Batched LSTM recurrence with exact backpropagation through time.

Sequences are right-padded to a common length ``T``; inputs and upstream
gradients at padded steps must be zero.  Because padding trails the valid
steps, the causal recurrence never lets it leak into valid outputs, and the
zero upstream gradient keeps it out of every parameter gradient.

Weights use the math orientation: ``Wx`` is ``4H x D``, ``Wh`` is ``4H x H``;
gate blocks are ordered input, forget, output, candidate.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as sigmoid


def init_lstm(rng, input_size, hidden_size, scale, forget_bias=1.0, prefix=""):
    H = hidden_size
    b = np.zeros(4 * H)
    b[H:2 * H] = forget_bias
    return {
        prefix + "Wx": rng.uniform(-scale, scale, size=(4 * H, input_size)),
        prefix + "Wh": rng.uniform(-scale, scale, size=(4 * H, H)),
        prefix + "b": b,
    }


def lstm_forward(x, Wx, Wh, b):
    """Run the recurrence over ``x`` of shape ``(B, T, D)`` from zero state.

    Returns hidden states ``(B, T, H)`` and the cache needed by
    :func:`lstm_backward`.
    """
    B, T, _ = x.shape
    H = Wh.shape[1]
    xz = x @ Wx.T + b
    gates = np.empty((B, T, 4 * H))
    cells = np.empty((B, T, H))
    tanh_c = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = xz[:, t] + h @ Wh.T
        g = np.empty_like(z)
        g[:, :3 * H] = sigmoid(z[:, :3 * H])
        g[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = g[:, H:2 * H] * c + g[:, :H] * g[:, 3 * H:]
        tc = np.tanh(c)
        h = g[:, 2 * H:3 * H] * tc
        gates[:, t], cells[:, t], tanh_c[:, t], hs[:, t] = g, c, tc, h
    cache = (x, Wx, Wh, gates, cells, tanh_c, hs)
    return hs, cache


def lstm_backward(dhs, cache):
    """Gradients of a scalar loss given ``dL/dh`` at every step.

    Returns ``(dx, {"Wx", "Wh", "b"})``.
    """
    x, Wx, Wh, gates, cells, tanh_c, hs = cache
    B, T, H = dhs.shape
    dz_all = np.empty((B, T, 4 * H))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = tanh_c[:, t]
        c_prev = cells[:, t - 1] if t > 0 else np.zeros((B, H))
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.empty((B, 4 * H))
        dz[:, :H] = dc * cand * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dh_next = dz @ Wh
        dWh += dz.T @ h_prev
        dz_all[:, t] = dz
    flat = dz_all.reshape(B * T, 4 * H)
    grads = {
        "Wx": flat.T @ x.reshape(B * T, -1),
        "Wh": dWh,
        "b": flat.sum(axis=0),
    }
    dx = dz_all @ Wx
    return dx, grads


def reverse_index(lengths, T):
    """Index ``(B, T)`` that reverses each sequence within its own length.

    Padded positions map to themselves, so the map is an involution.
    """
    t = np.arange(T)[None, :]
    lengths = np.asarray(lengths)[:, None]
    return np.where(t < lengths, lengths - 1 - t, t)


def reverse_padded(x, rev_idx):
    return np.take_along_axis(x, rev_idx[:, :, None], axis=1)

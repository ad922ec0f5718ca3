"""Shared building blocks: parameter init, affine maps, the fused LSTM cell.

Parameters live in flat ``dict[str, Tensor]`` stores keyed by dotted names
(``"word_rnn.W"``); every helper takes the store plus a key prefix so model
components can be checked, saved, and optimized uniformly.
"""

from __future__ import annotations

import numpy as np

from eventcap import kernels
from eventcap.autodiff import Tensor, concat, tensor

__all__ = [
    "xavier_uniform",
    "parameter",
    "affine",
    "lstm_cell",
    "init_affine",
    "init_lstm",
    "affine_step",
    "lstm_step",
    "zero_state",
    "zero_grads",
]


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def parameter(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def affine(x, W, b=None):
    out = tensor(x) @ W
    if b is not None:
        out = out + b
    return out


def lstm_cell(a, c_prev):
    """Fused LSTM cell as a single tape op backed by the selected kernel.

    ``a`` is the (B, 4H) pre-activation ``[x; h_prev] @ W + b`` with gate
    blocks i|f|g|o; returns the new hidden and cell states, each (B, H).
    """
    a = tensor(a)
    c_prev = tensor(c_prev)
    a_data = np.ascontiguousarray(a.data)
    c_prev_data = np.ascontiguousarray(c_prev.data)
    hc_data, gates = kernels.lstm_cell_forward(a_data, c_prev_data)
    H = c_prev_data.shape[1]
    c_data = np.ascontiguousarray(hc_data[:, H:])

    def backward(g):
        da, dc_prev = kernels.lstm_cell_backward(
            np.ascontiguousarray(g), gates, c_prev_data, c_data
        )
        if a.requires_grad:
            a._accumulate(da)
        if c_prev.requires_grad:
            c_prev._accumulate(dc_prev)

    hc = Tensor._make(hc_data, (a, c_prev), backward)
    return hc[:, :H], hc[:, H:]


def init_affine(params, prefix, rng, d_in, d_out, bias=True):
    params[f"{prefix}.W"] = parameter(xavier_uniform(rng, d_in, d_out))
    if bias:
        params[f"{prefix}.b"] = parameter(np.zeros((1, d_out)))


def init_lstm(params, prefix, rng, d_in, hidden):
    params[f"{prefix}.W"] = parameter(xavier_uniform(rng, d_in + hidden, 4 * hidden))
    b = np.zeros((1, 4 * hidden))
    b[0, hidden : 2 * hidden] = 1.0  # forget-gate bias
    params[f"{prefix}.b"] = parameter(b)


def affine_step(params, prefix, x):
    return affine(x, params[f"{prefix}.W"], params.get(f"{prefix}.b"))


def lstm_step(params, prefix, x, h, c):
    a = affine(concat([tensor(x), tensor(h)], axis=1), params[f"{prefix}.W"], params[f"{prefix}.b"])
    return lstm_cell(a, c)


def zero_state(hidden, batch=1):
    return tensor(np.zeros((batch, hidden))), tensor(np.zeros((batch, hidden)))


def zero_grads(params):
    for p in params.values():
        p.grad = None

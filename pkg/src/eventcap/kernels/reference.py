"""Pure-numpy kernels; the fallback when the compiled extension is absent.

Signatures mirror ``eventcap.kernels._fastcore`` exactly. The LSTM cell is
fused over its elementwise part: the caller supplies the pre-activations
``a = [x; h_prev] @ W + b`` laid out as the four gate blocks ``i | f | g | o``,
each of width H.
"""

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell_forward(a, c_prev):
    """Fused LSTM cell, elementwise stage.

    Args:
        a: (B, 4H) gate pre-activations, blocks i|f|g|o.
        c_prev: (B, H) previous cell state.
    Returns:
        hc: (B, 2H) with h in the first H columns and c in the last H.
        gates: (B, 4H) post-activation gate values, cached for backward.
    """
    B, four_h = a.shape
    H = four_h // 4
    i = _sigmoid(a[:, :H])
    f = _sigmoid(a[:, H : 2 * H])
    g = np.tanh(a[:, 2 * H : 3 * H])
    o = _sigmoid(a[:, 3 * H :])
    c = f * c_prev + i * g
    hc = np.empty((B, 2 * H))
    hc[:, :H] = o * np.tanh(c)
    hc[:, H:] = c
    gates = np.concatenate([i, f, g, o], axis=1)
    return hc, gates


def lstm_cell_backward(dhc, gates, c_prev, c):
    """Backward of :func:`lstm_cell_forward`.

    Args:
        dhc: (B, 2H) upstream gradient for [h | c].
        gates: cached post-activation gates from the forward pass.
        c_prev: (B, H) previous cell state.
        c: (B, H) cell state produced by the forward pass.
    Returns:
        da: (B, 4H) gradient wrt the pre-activations.
        dc_prev: (B, H) gradient wrt the previous cell state.
    """
    H = c.shape[1]
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    g = gates[:, 2 * H : 3 * H]
    o = gates[:, 3 * H :]
    dh = dhc[:, :H]
    tc = np.tanh(c)
    dc = dhc[:, H:] + dh * o * (1.0 - tc * tc)
    da = np.empty_like(gates)
    da[:, :H] = dc * g * i * (1.0 - i)
    da[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
    da[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
    da[:, 3 * H :] = dh * tc * o * (1.0 - o)
    dc_prev = dc * f
    return da, dc_prev

"""Pure numpy reference implementation of the hot kernels.

Semantics are shared with the compiled core (condseq._kernels.core); the
backend is chosen once at import in condseq._kernels. Gate layout in all
packed arrays is [input, forget, candidate, output] along the last axis.
"""

import numpy as np


def sigmoid(z):
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_seq_forward(x, wx, wh, b, h0, c0):
    """Run a single-direction LSTM over a whole sequence.

    x: [L, Din], wx: [Din, 4H], wh: [H, 4H], b: [4H], h0/c0: [H].
    Returns (h_all [L, H], c_all [L, H], gates [L, 4H]) where gates holds
    the post-activation gate values needed by the backward pass.
    """
    L = x.shape[0]
    H = wh.shape[0]
    xw = x @ wx + b
    h_all = np.empty((L, H), dtype=x.dtype)
    c_all = np.empty((L, H), dtype=x.dtype)
    gates = np.empty((L, 4 * H), dtype=x.dtype)
    h = h0
    c = c0
    for t in range(L):
        pre = xw[t] + h @ wh
        i = sigmoid(pre[:H])
        f = sigmoid(pre[H:2 * H])
        g = np.tanh(pre[2 * H:3 * H])
        o = sigmoid(pre[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :H] = i
        gates[t, H:2 * H] = f
        gates[t, 2 * H:3 * H] = g
        gates[t, 3 * H:] = o
        h_all[t] = h
        c_all[t] = c
    return h_all, c_all, gates


def lstm_seq_backward(dh_all, x, wx, wh, h_all, c_all, gates, h0, c0):
    """Backpropagate through lstm_seq_forward.

    dh_all: [L, H] upstream gradient on every hidden state.
    Returns (dx, dwx, dwh, db, dh0, dc0).
    """
    L = x.shape[0]
    H = wh.shape[0]
    dgates = np.empty((L, 4 * H), dtype=x.dtype)
    dh_next = np.zeros(H, dtype=x.dtype)
    dc_next = np.zeros(H, dtype=x.dtype)
    wh_t = wh.T
    for t in range(L - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H:2 * H]
        g = gates[t, 2 * H:3 * H]
        o = gates[t, 3 * H:]
        c_prev = c_all[t - 1] if t > 0 else c0
        tc = np.tanh(c_all[t])
        dh = dh_all[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dgates[t, :H] = di * i * (1.0 - i)
        dgates[t, H:2 * H] = df * f * (1.0 - f)
        dgates[t, 2 * H:3 * H] = dg * (1.0 - g * g)
        dgates[t, 3 * H:] = do * o * (1.0 - o)
        dh_next = dgates[t] @ wh_t
    h_prev_all = np.vstack([h0[None, :], h_all[:-1]]) if L > 1 else h0[None, :]
    dx = dgates @ wx.T
    dwx = x.T @ dgates
    dwh = h_prev_all.T @ dgates
    db = dgates.sum(axis=0)
    return dx, dwx, dwh, db, dh_next, dc_next


def lstm_step_forward(x, h, c, wx, wh, b):
    """One batched LSTM step.

    x: [B, Din], h/c: [B, H]. Returns (h_new, c_new, gates [B, 4H]).
    """
    H = wh.shape[0]
    pre = x @ wx + h @ wh + b
    i = sigmoid(pre[:, :H])
    f = sigmoid(pre[:, H:2 * H])
    g = np.tanh(pre[:, 2 * H:3 * H])
    o = sigmoid(pre[:, 3 * H:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    gates = np.concatenate([i, f, g, o], axis=1)
    return h_new, c_new, gates


def lstm_step_backward(dh, dc, x, h, c, wx, wh, gates, c_new):
    """Backpropagate one batched LSTM step.

    Returns (dx, dh_prev, dc_prev, dwx, dwh, db).
    """
    H = wh.shape[0]
    i = gates[:, :H]
    f = gates[:, H:2 * H]
    g = gates[:, 2 * H:3 * H]
    o = gates[:, 3 * H:]
    tc = np.tanh(c_new)
    do = dh * tc
    dcc = dh * o * (1.0 - tc * tc) + dc
    di = dcc * g
    dg = dcc * i
    df = dcc * c
    dc_prev = dcc * f
    dgates = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=1,
    )
    dx = dgates @ wx.T
    dh_prev = dgates @ wh.T
    dwx = x.T @ dgates
    dwh = h.T @ dgates
    db = dgates.sum(axis=0)
    return dx, dh_prev, dc_prev, dwx, dwh, db

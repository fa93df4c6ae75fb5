# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM kernels.

Same contracts as condseq._kernels.pyref; gate layout [i, f, g, o].
Large non-recurrent matmuls go through numpy/BLAS, the per-step
recurrence runs in C.
"""

import numpy as np

cimport cython
from libc.math cimport exp, tanh

ctypedef fused real:
    float
    double


cdef inline real _sig(real z) noexcept nogil:
    cdef real ez
    if z >= 0:
        return <real>1.0 / (<real>1.0 + <real>exp(-z))
    ez = <real>exp(z)
    return ez / (<real>1.0 + ez)


def lstm_seq_forward(real[:, ::1] x, real[:, ::1] wx, real[:, ::1] wh,
                     real[::1] b, real[::1] h0, real[::1] c0):
    cdef Py_ssize_t L = x.shape[0]
    cdef Py_ssize_t H = wh.shape[0]
    cdef Py_ssize_t G = 4 * H
    dtype = np.float32 if real is float else np.float64

    xw_nd = np.asarray(x) @ np.asarray(wx) + np.asarray(b)
    h_all_nd = np.empty((L, H), dtype=dtype)
    c_all_nd = np.empty((L, H), dtype=dtype)
    gates_nd = np.empty((L, G), dtype=dtype)
    pre_nd = np.empty(G, dtype=dtype)
    h_nd = np.array(h0, dtype=dtype, copy=True)
    c_nd = np.array(c0, dtype=dtype, copy=True)

    cdef real[:, ::1] xw = xw_nd
    cdef real[:, ::1] h_all = h_all_nd
    cdef real[:, ::1] c_all = c_all_nd
    cdef real[:, ::1] gates = gates_nd
    cdef real[::1] pre = pre_nd
    cdef real[::1] h = h_nd
    cdef real[::1] c = c_nd
    cdef Py_ssize_t t, j, k
    cdef real hv, iv, fv, gv, ov, cv

    with nogil:
        for t in range(L):
            for j in range(G):
                pre[j] = xw[t, j]
            for k in range(H):
                hv = h[k]
                for j in range(G):
                    pre[j] = pre[j] + hv * wh[k, j]
            for j in range(H):
                iv = _sig(pre[j])
                fv = _sig(pre[H + j])
                gv = <real>tanh(pre[2 * H + j])
                ov = _sig(pre[3 * H + j])
                cv = fv * c[j] + iv * gv
                c[j] = cv
                h[j] = ov * <real>tanh(cv)
                gates[t, j] = iv
                gates[t, H + j] = fv
                gates[t, 2 * H + j] = gv
                gates[t, 3 * H + j] = ov
                h_all[t, j] = h[j]
                c_all[t, j] = cv
    return h_all_nd, c_all_nd, gates_nd


def lstm_seq_backward(real[:, ::1] dh_all, real[:, ::1] x, real[:, ::1] wx,
                      real[:, ::1] wh, real[:, ::1] h_all, real[:, ::1] c_all,
                      real[:, ::1] gates, real[::1] h0, real[::1] c0):
    cdef Py_ssize_t L = x.shape[0]
    cdef Py_ssize_t H = wh.shape[0]
    cdef Py_ssize_t G = 4 * H
    dtype = np.float32 if real is float else np.float64

    dgates_nd = np.empty((L, G), dtype=dtype)
    dh_next_nd = np.zeros(H, dtype=dtype)
    dc_next_nd = np.zeros(H, dtype=dtype)

    cdef real[:, ::1] dgates = dgates_nd
    cdef real[::1] dh_next = dh_next_nd
    cdef real[::1] dc_next = dc_next_nd
    cdef Py_ssize_t t, j, k
    cdef real iv, fv, gv, ov, tc, dh, do, dc, di, dg, df, cp, acc

    with nogil:
        for t in range(L - 1, -1, -1):
            for j in range(H):
                iv = gates[t, j]
                fv = gates[t, H + j]
                gv = gates[t, 2 * H + j]
                ov = gates[t, 3 * H + j]
                if t > 0:
                    cp = c_all[t - 1, j]
                else:
                    cp = c0[j]
                tc = <real>tanh(c_all[t, j])
                dh = dh_all[t, j] + dh_next[j]
                do = dh * tc
                dc = dh * ov * (<real>1.0 - tc * tc) + dc_next[j]
                di = dc * gv
                dg = dc * iv
                df = dc * cp
                dc_next[j] = dc * fv
                dgates[t, j] = di * iv * (<real>1.0 - iv)
                dgates[t, H + j] = df * fv * (<real>1.0 - fv)
                dgates[t, 2 * H + j] = dg * (<real>1.0 - gv * gv)
                dgates[t, 3 * H + j] = do * ov * (<real>1.0 - ov)
            for j in range(H):
                acc = 0
                for k in range(G):
                    acc = acc + dgates[t, k] * wh[j, k]
                dh_next[j] = acc

    x_nd = np.asarray(x)
    h_prev = np.empty_like(np.asarray(h_all))
    h_prev[0] = np.asarray(h0)
    if L > 1:
        h_prev[1:] = np.asarray(h_all)[:-1]
    dx = dgates_nd @ np.asarray(wx).T
    dwx = x_nd.T @ dgates_nd
    dwh = h_prev.T @ dgates_nd
    db = dgates_nd.sum(axis=0)
    return dx, dwx, dwh, db, dh_next_nd, dc_next_nd


def lstm_step_forward(real[:, ::1] x, real[:, ::1] h, real[:, ::1] c,
                      real[:, ::1] wx, real[:, ::1] wh, real[::1] b):
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t Din = x.shape[1]
    cdef Py_ssize_t H = wh.shape[0]
    cdef Py_ssize_t G = 4 * H
    dtype = np.float32 if real is float else np.float64

    h_new_nd = np.empty((B, H), dtype=dtype)
    c_new_nd = np.empty((B, H), dtype=dtype)
    gates_nd = np.empty((B, G), dtype=dtype)
    pre_nd = np.empty(G, dtype=dtype)

    cdef real[:, ::1] h_new = h_new_nd
    cdef real[:, ::1] c_new = c_new_nd
    cdef real[:, ::1] gates = gates_nd
    cdef real[::1] pre = pre_nd
    cdef Py_ssize_t n, j, k
    cdef real v, iv, fv, gv, ov, cv

    with nogil:
        for n in range(B):
            for j in range(G):
                pre[j] = b[j]
            for k in range(Din):
                v = x[n, k]
                for j in range(G):
                    pre[j] = pre[j] + v * wx[k, j]
            for k in range(H):
                v = h[n, k]
                for j in range(G):
                    pre[j] = pre[j] + v * wh[k, j]
            for j in range(H):
                iv = _sig(pre[j])
                fv = _sig(pre[H + j])
                gv = <real>tanh(pre[2 * H + j])
                ov = _sig(pre[3 * H + j])
                cv = fv * c[n, j] + iv * gv
                gates[n, j] = iv
                gates[n, H + j] = fv
                gates[n, 2 * H + j] = gv
                gates[n, 3 * H + j] = ov
                c_new[n, j] = cv
                h_new[n, j] = ov * <real>tanh(cv)
    return h_new_nd, c_new_nd, gates_nd


def lstm_step_backward(real[:, ::1] dh, real[:, ::1] dc, real[:, ::1] x,
                       real[:, ::1] h, real[:, ::1] c, real[:, ::1] wx,
                       real[:, ::1] wh, real[:, ::1] gates, real[:, ::1] c_new):
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t H = wh.shape[0]
    cdef Py_ssize_t G = 4 * H
    dtype = np.float32 if real is float else np.float64

    dgates_nd = np.empty((B, G), dtype=dtype)
    dc_prev_nd = np.empty((B, H), dtype=dtype)

    cdef real[:, ::1] dgates = dgates_nd
    cdef real[:, ::1] dc_prev = dc_prev_nd
    cdef Py_ssize_t n, j
    cdef real iv, fv, gv, ov, tc, dhv, do, dcc, di, dg, df

    with nogil:
        for n in range(B):
            for j in range(H):
                iv = gates[n, j]
                fv = gates[n, H + j]
                gv = gates[n, 2 * H + j]
                ov = gates[n, 3 * H + j]
                tc = <real>tanh(c_new[n, j])
                dhv = dh[n, j]
                do = dhv * tc
                dcc = dhv * ov * (<real>1.0 - tc * tc) + dc[n, j]
                di = dcc * gv
                dg = dcc * iv
                df = dcc * c[n, j]
                dc_prev[n, j] = dcc * fv
                dgates[n, j] = di * iv * (<real>1.0 - iv)
                dgates[n, H + j] = df * fv * (<real>1.0 - fv)
                dgates[n, 2 * H + j] = dg * (<real>1.0 - gv * gv)
                dgates[n, 3 * H + j] = do * ov * (<real>1.0 - ov)

    dx = dgates_nd @ np.asarray(wx).T
    dh_prev = dgates_nd @ np.asarray(wh).T
    dwx = np.asarray(x).T @ dgates_nd
    dwh = np.asarray(h).T @ dgates_nd
    db = dgates_nd.sum(axis=0)
    return dx, dh_prev, dc_prev_nd, dwx, dwh, db

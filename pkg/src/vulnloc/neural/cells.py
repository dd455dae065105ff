"""Recurrent cells over whole batches of sequences, with hand-written BPTT.

Inputs are (batch, time, features). Gate weights are stored side by side:
W is (features, G*H), U is (H, G*H), b is (G*H,).
"""

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(X, W, U, b):
    """Run a GRU left to right; returns all hidden states and a cache."""
    B, T, _ = X.shape
    H = U.shape[0]
    xw = X @ W + b
    h = np.zeros((B, H))
    hs = np.zeros((B, T, H))
    zs, rs, hhs = np.zeros((B, T, H)), np.zeros((B, T, H)), np.zeros((B, T, H))
    prev = np.zeros((B, T, H))
    Uzr, Uh = U[:, :2 * H], U[:, 2 * H:]
    for t in range(T):
        hu = h @ Uzr
        z = sigmoid(xw[:, t, :H] + hu[:, :H])
        r = sigmoid(xw[:, t, H:2 * H] + hu[:, H:])
        hh = np.tanh(xw[:, t, 2 * H:] + (r * h) @ Uh)
        prev[:, t] = h
        h = z * h + (1.0 - z) * hh
        hs[:, t], zs[:, t], rs[:, t], hhs[:, t] = h, z, r, hh
    return hs, (X, W, U, prev, zs, rs, hhs)


def gru_backward(dhs, cache):
    X, W, U, prev, zs, rs, hhs = cache
    B, T, _ = X.shape
    H = U.shape[0]
    Uzr, Uh = U[:, :2 * H], U[:, 2 * H:]
    dxw = np.zeros((B, T, 3 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dhs[:, t] + dh_next
        z, r, hh, hp = zs[:, t], rs[:, t], hhs[:, t], prev[:, t]
        dz = dh * (hp - hh)
        d_hh = dh * (1.0 - z) * (1.0 - hh * hh)
        dh_prev = dh * z
        dU[:, 2 * H:] += (r * hp).T @ d_hh
        drh = d_hh @ Uh.T
        dr = drh * hp
        dh_prev += drh * r
        dzr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        dU[:, :2 * H] += hp.T @ dzr
        dh_prev += dzr @ Uzr.T
        dxw[:, t, :2 * H] = dzr
        dxw[:, t, 2 * H:] = d_hh
        dh_next = dh_prev
    dW = np.einsum("bti,btj->ij", X, dxw)
    db = dxw.sum(axis=(0, 1))
    dX = dxw @ W.T
    return dX, dW, dU, db


def lstm_forward(X, W, U, b):
    """LSTM with gates ordered input, forget, output, candidate."""
    B, T, _ = X.shape
    H = U.shape[0]
    xw = X @ W + b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.zeros((B, T, H))
    gates = np.zeros((B, T, 4 * H))
    cs = np.zeros((B, T, H))
    hprev = np.zeros((B, T, H))
    cprev = np.zeros((B, T, H))
    for t in range(T):
        a = xw[:, t] + h @ U
        g = np.empty_like(a)
        g[:, :3 * H] = sigmoid(a[:, :3 * H])
        g[:, 3 * H:] = np.tanh(a[:, 3 * H:])
        hprev[:, t], cprev[:, t] = h, c
        c = g[:, H:2 * H] * c + g[:, :H] * g[:, 3 * H:]
        h = g[:, 2 * H:3 * H] * np.tanh(c)
        hs[:, t], gates[:, t], cs[:, t] = h, g, c
    return hs, (X, W, U, gates, cs, hprev, cprev)


def lstm_backward(dhs, cache):
    X, W, U, gates, cs, hprev, cprev = cache
    B, T, _ = X.shape
    H = U.shape[0]
    dxw = np.zeros((B, T, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * cand * i * (1.0 - i),
            dc * cprev[:, t] * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - cand * cand),
        ], axis=1)
        dxw[:, t] = da
        dU += hprev[:, t].T @ da
        dh_next = da @ U.T
        dc_next = dc * f
    dW = np.einsum("bti,btj->ij", X, dxw)
    db = dxw.sum(axis=(0, 1))
    dX = dxw @ W.T
    return dX, dW, dU, db


CELLS = {
    "gru": (3, gru_forward, gru_backward),
    "lstm": (4, lstm_forward, lstm_backward),
}

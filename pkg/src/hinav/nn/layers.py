"""Dense, valid 2D convolution and LSTM layers with analytic backward passes.

All functions work on batched inputs (leading batch axis).  Forward passes
return ``(output, cache)``; backward passes take the cache and the output
gradient and return the input gradient followed by parameter gradients.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(z, y, dy, kind):
    if kind == "relu":
        return dy * (z > 0)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    return dy


def dense_forward(W, b, x, activation="linear"):
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeMismatch(f"dense: input {x.shape} vs weights {W.shape}, bias {b.shape}")
    z = x @ W + b
    y = activate(z, activation)
    return y, (x, z, y, activation)


def dense_backward(W, cache, dy):
    x, z, y, activation = cache
    dz = activation_grad(z, y, dy, activation)
    x2 = x.reshape(-1, x.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    return dz @ W.T, x2.T @ dz2, dz2.sum(axis=0)


def conv_output_size(n, k, s):
    return (n - k) // s + 1


def conv2d_forward(K, b, x, stride=(1, 1), activation="relu"):
    """Valid cross-correlation. x: (B, H, W, C); K: (kh, kw, C, F)."""
    kh, kw, cin, cout = K.shape
    if x.ndim != 4 or x.shape[3] != cin or x.shape[1] < kh or x.shape[2] < kw or b.shape != (cout,):
        raise ShapeMismatch(f"conv2d: input {x.shape} vs kernel {K.shape}")
    sh, sw = stride
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    B, Ho, Wo = win.shape[:3]
    cols = win.reshape(B, Ho, Wo, cin * kh * kw)
    kmat = K.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    z = (cols.reshape(-1, cols.shape[-1]) @ kmat).reshape(B, Ho, Wo, cout) + b
    y = activate(z, activation)
    return y, (x.shape, cols, z, y, stride, activation)


def conv2d_backward(K, cache, dy, need_dx=True):
    """Returns (dx, dK, db); dx is None when ``need_dx`` is False."""
    x_shape, cols, z, y, (sh, sw), activation = cache
    kh, kw, cin, cout = K.shape
    dz = activation_grad(z, y, dy, activation)
    B, Ho, Wo = dz.shape[:3]
    kmat = K.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    dk = cols.reshape(-1, cols.shape[-1]).T @ dz.reshape(-1, cout)
    dK = dk.reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
    db = dz.reshape(-1, cout).sum(axis=0)
    if not need_dx:
        return None, dK, db
    dcols = (dz.reshape(-1, cout) @ kmat.T).reshape(B, Ho, Wo, cin, kh, kw)
    dx = np.zeros(x_shape)
    for i in range(kh):
        for j in range(kw):
            dx[:, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw, :] += dcols[..., i, j]
    return dx, dK, db


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden, batch=None):
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))

    def copy(self):
        return LstmState(self.h.copy(), self.c.copy())

    def to_tensors(self, prefix="lstm_state"):
        return {prefix + ".h": self.h, prefix + ".c": self.c}

    @classmethod
    def from_tensors(cls, tensors, prefix="lstm_state"):
        return cls(np.array(tensors[prefix + ".h"]), np.array(tensors[prefix + ".c"]))


def _lstm_gates(z, H):
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    return i, f, o, g


def lstm_step(Wx, Wh, b, x, state):
    """One LSTM cell step, gates ordered (input, forget, output, candidate)."""
    H = Wh.shape[0]
    if x.shape[-1] != Wx.shape[0] or state.h.shape[-1] != H or Wx.shape[1] != 4 * H:
        raise ShapeMismatch(f"lstm: input {x.shape}, state {state.h.shape}, Wx {Wx.shape}")
    z = x @ Wx + state.h @ Wh + b
    i, f, o, g = _lstm_gates(z, H)
    c = f * state.c + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, LstmState(h, c), (x, state.h, state.c, i, f, o, g, tc)


def lstm_forward_sequence(Wx, Wh, b, xs, state):
    """Unroll over xs: (B, T, I). Returns hs (B, T, H), final state, caches."""
    B, T, _ = xs.shape
    H = Wh.shape[0]
    if xs.shape[-1] != Wx.shape[0] or state.h.shape != (B, H):
        raise ShapeMismatch(f"lstm: inputs {xs.shape}, state {state.h.shape}")
    zx = xs @ Wx + b
    hs = np.empty((B, T, H))
    h, c = state.h, state.c
    caches = []
    for t in range(T):
        z = zx[:, t] + h @ Wh
        i, f, o, g = _lstm_gates(z, H)
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        caches.append((h_prev, c_prev, i, f, o, g, tc))
    return hs, LstmState(h, c), (xs, caches)


def lstm_backward_sequence(Wx, Wh, cache, dhs, dh_final=None, dc_final=None):
    """BPTT. Returns dxs, dWx, dWh, db, dh0, dc0."""
    xs, caches = cache
    B, T, _ = xs.shape
    H = Wh.shape[0]
    dz_all = np.empty((B, T, 4 * H))
    dh = np.zeros((B, H)) if dh_final is None else dh_final.copy()
    dc = np.zeros((B, H)) if dc_final is None else dc_final.copy()
    dWh = np.zeros_like(Wh)
    for t in range(T - 1, -1, -1):
        h_prev, c_prev, i, f, o, g, tc = caches[t]
        dh = dh + dhs[:, t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = dz_all[:, t]
        dz[:, :H] = di * i * (1.0 - i)
        dz[:, H:2 * H] = df * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = do * o * (1.0 - o)
        dz[:, 3 * H:] = dg * (1.0 - g * g)
        dWh += h_prev.T @ dz
        dh = dz @ Wh.T
        dc = dc * f
    dxs = dz_all @ Wx.T
    dWx = xs.reshape(-1, xs.shape[-1]).T @ dz_all.reshape(-1, 4 * H)
    db = dz_all.reshape(-1, 4 * H).sum(axis=0)
    return dxs, dWx, dWh, db, dh, dc


def lstm_step_backward(Wx, Wh, cache, dh, dc):
    """Backward through a single lstm_step; returns dx, dh_prev, dc_prev, dWx, dWh, db."""
    x, h_prev, c_prev, i, f, o, g, tc = cache
    H = Wh.shape[0]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                         do * o * (1.0 - o), dc * i * (1.0 - g * g)], axis=-1)
    x2 = x.reshape(-1, x.shape[-1])
    h2 = h_prev.reshape(-1, H)
    dz2 = dz.reshape(-1, 4 * H)
    return dz @ Wx.T, dz @ Wh.T, dc * f, x2.T @ dz2, h2.T @ dz2, dz2.sum(axis=0)

"""Dense and recurrent layers with hand-written reverse-mode gradients.

Every forward function returns its output together with a cache (the tape
entry) that the matching backward function consumes.  Recurrent weights
use the layout ``Wx: (F, G*H)``, ``Wh: (H, G*H)``, ``b: (G*H,)`` where the
gate blocks are ordered

* LSTM (G=4): input, forget, candidate, output
* GRU (G=3): reset, update, candidate
* vanilla (G=1): tanh state
"""

from __future__ import annotations

import numpy as np

CELLS = ("lstm", "gru", "vanilla")
GATES = {"lstm": 4, "gru": 3, "vanilla": 1}


class ShapeError(ValueError):
    pass


def _sigmoid(z):
    # tanh form: overflow-free and much faster than exp-based variants
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def dense_forward(x, W, b, activation=None):
    """``act(x @ W + b)`` over the last axis of ``x``."""
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense layer got input {x.shape}, W {W.shape}, b {b.shape}")
    if activation not in (None, "relu"):
        raise ValueError(f"unsupported activation {activation!r}")
    z = x @ W + b
    y = np.maximum(z, 0) if activation == "relu" else z
    return y, (x, W, z, activation)


def dense_backward(dy, cache):
    x, W, z, activation = cache
    dz = dy * (z > 0) if activation == "relu" else dy
    x2 = x.reshape(-1, x.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    return dz @ W.T, x2.T @ dz2, dz2.sum(axis=0)


def init_state(cell: str, batch: int, hidden: int, dtype=np.float32):
    h = np.zeros((batch, hidden), dtype=dtype)
    if cell == "lstm":
        return (h, np.zeros_like(h))
    return (h,)


def _check(cell, x, state, Wx, Wh, b):
    if cell not in CELLS:
        raise ValueError(f"unknown cell kind {cell!r}")
    H = Wh.shape[0]
    G = GATES[cell]
    if Wx.shape != (x.shape[-1], G * H) or Wh.shape != (H, G * H) or b.shape != (G * H,):
        raise ShapeError(
            f"{cell} cell weights Wx {Wx.shape}, Wh {Wh.shape}, b {b.shape} do not fit input {x.shape} "
            f"with hidden size {H}"
        )
    if any(s.shape != (x.shape[0], H) for s in state):
        raise ShapeError(f"{cell} state shapes {[s.shape for s in state]} do not match batch {x.shape[0]}, hidden {H}")


def cell_forward(cell: str, x, state, Wx, Wh, b):
    """One time step for a batch ``x`` of shape ``(B, F)``.

    Returns ``(h_new, state_new, cache)``.
    """
    _check(cell, x, state, Wx, Wh, b)
    h = state[0]
    H = h.shape[1]
    if cell == "lstm":
        c = state[1]
        z = x @ Wx + h @ Wh + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, (h_new, c_new), (x, h, c, i, f, g, o, tc)
    if cell == "gru":
        zx = x @ Wx + b
        zh = h @ Wh
        r = _sigmoid(zx[:, :H] + zh[:, :H])
        u = _sigmoid(zx[:, H:2 * H] + zh[:, H:2 * H])
        n = np.tanh(zx[:, 2 * H:] + r * zh[:, 2 * H:])
        h_new = (1 - u) * n + u * h
        return h_new, (h_new,), (x, h, r, u, n, zh[:, 2 * H:])
    h_new = np.tanh(x @ Wx + h @ Wh + b)
    return h_new, (h_new,), (x, h, h_new)


def _cell_dz(cell: str, dh, dc_extra, cache, Wh):
    """Pre-activation gradients of one step.

    Returns ``(dzx, dzh, dh_prev, dc_prev)`` where ``dzx`` multiplies the
    input projection and ``dzh`` the recurrent projection (they differ only
    for the GRU candidate).  ``dh_prev`` excludes the ``dzh @ Wh.T`` term
    for the LSTM and vanilla cells, which the caller adds.
    """
    if cell == "lstm":
        x, h, c, i, f, g, o, tc = cache
        dc = dh * o * (1 - tc * tc)
        if dc_extra is not None:
            dc = dc + dc_extra
        dz = np.concatenate([
            dc * g * i * (1 - i),
            dc * c * f * (1 - f),
            dc * i * (1 - g * g),
            dh * tc * o * (1 - o),
        ], axis=1)
        return dz, dz, dz @ Wh.T, dc * f
    if cell == "gru":
        x, h, r, u, n, zhn = cache
        dn = dh * (1 - u)
        du = dh * (h - n)
        dzn = dn * (1 - n * n)
        dzr = dzn * zhn * r * (1 - r)
        dzu = du * u * (1 - u)
        dzx = np.concatenate([dzr, dzu, dzn], axis=1)
        dzh = np.concatenate([dzr, dzu, dzn * r], axis=1)
        return dzx, dzh, dh * u + dzh @ Wh.T, None
    x, h, h_new = cache
    dz = dh * (1 - h_new * h_new)
    return dz, dz, dz @ Wh.T, None


def cell_backward(cell: str, dh, dstate_extra, cache, Wx, Wh):
    """Backward through one step.

    ``dh`` is the total gradient w.r.t. the step's output/hidden state and
    ``dstate_extra`` the gradient w.r.t. the LSTM cell state (``None``
    otherwise).  Returns ``(dx, dh_prev, dc_prev, dWx, dWh, db)``.
    """
    dzx, dzh, dh_prev, dc_prev = _cell_dz(cell, dh, dstate_extra, cache, Wh)
    x, h = cache[0], cache[1]
    return dzx @ Wx.T, dh_prev, dc_prev, x.T @ dzx, h.T @ dzh, dzx.sum(axis=0)


def recurrent_step(cell: str, x_t, state, params):
    """Pure single-step evaluation: ``(output_t, state')``."""
    h, st, _ = cell_forward(cell, x_t, state, params["Wx"], params["Wh"], params["b"])
    return h, st


def recurrent_forward(cell: str, x, params, state=None, keep_cache=True):
    """Unroll a cell over ``x`` of shape ``(B, T, F)``.

    Returns ``(outputs (B, T, H), final_state, cache)``; the cache is
    ``None`` when ``keep_cache`` is false (inference).
    """
    Wx, Wh, b = params["Wx"], params["Wh"], params["b"]
    B, T, _ = x.shape
    if state is None:
        state = init_state(cell, B, Wh.shape[0], x.dtype)
    outs = np.empty((B, T, Wh.shape[0]), dtype=np.result_type(x, Wh))
    caches = []
    for t in range(T):
        h, state, cache = cell_forward(cell, x[:, t], state, Wx, Wh, b)
        outs[:, t] = h
        if keep_cache:
            caches.append(cache)
    return outs, state, (cell, caches, Wx, Wh) if keep_cache else None


def recurrent_backward(dout, cache):
    """Backpropagation through time; returns ``(dx, grads)``.

    Only the recurrent term is evaluated step by step; input and weight
    gradients are formed afterwards with one matrix product each.
    """
    cell, caches, Wx, Wh = cache
    B, T, H = dout.shape
    GH = Wx.shape[1]
    dzx = np.empty((T, B, GH), dtype=dout.dtype)
    dzh = dzx if cell != "gru" else np.empty_like(dzx)
    dh_next = np.zeros((B, H), dtype=dout.dtype)
    dc_next = None
    for t in range(T - 1, -1, -1):
        zx, zh, dh_next, dc_next = _cell_dz(cell, dout[:, t] + dh_next, dc_next, caches[t], Wh)
        dzx[t] = zx
        if dzh is not dzx:
            dzh[t] = zh
    xs = np.stack([c[0] for c in caches])
    hs = np.stack([c[1] for c in caches])
    zx2 = dzx.reshape(T * B, GH)
    dWx = xs.reshape(T * B, -1).T @ zx2
    dWh = hs.reshape(T * B, H).T @ dzh.reshape(T * B, GH)
    dx = (zx2 @ Wx.T).reshape(T, B, -1).transpose(1, 0, 2)
    return dx, {"Wx": dWx, "Wh": dWh, "b": zx2.sum(axis=0)}


def reverse_padded(x, lengths):
    """Reverse each row's first ``lengths[i]`` steps along axis 1, keeping
    padding at the end.  Self-inverse."""
    B, T = x.shape[:2]
    if lengths is None:
        return x[:, ::-1]
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    idx = np.where(t < L, L - 1 - t, t)
    return x[np.arange(B)[:, None], idx]


def bidirectional_forward(cell: str, x, params_fw, params_bw, lengths=None, keep_cache=True):
    """Run a forward and a backward cell over ``x`` (B, T, F) and concatenate
    their per-step outputs to ``(B, T, 2H)``.

    ``lengths`` marks the valid prefix of each padded row; the backward cell
    starts at each row's last valid step.
    """
    if x.shape[1] == 0:
        raise ShapeError("bidirectional layer needs a non-empty window")
    out_f, _, cache_f = recurrent_forward(cell, x, params_fw, keep_cache=keep_cache)
    xr = reverse_padded(x, lengths)
    out_b, _, cache_b = recurrent_forward(cell, xr, params_bw, keep_cache=keep_cache)
    out = np.concatenate([out_f, reverse_padded(out_b, lengths)], axis=2)
    if not keep_cache:
        return out, None
    return out, (cache_f, cache_b, lengths, out_f.shape[2])


def bidirectional_backward(dout, cache):
    cache_f, cache_b, lengths, H = cache
    dx_f, g_f = recurrent_backward(np.ascontiguousarray(dout[:, :, :H]), cache_f)
    dx_b, g_b = recurrent_backward(reverse_padded(dout[:, :, H:], lengths), cache_b)
    return dx_f + reverse_padded(dx_b, lengths), g_f, g_b

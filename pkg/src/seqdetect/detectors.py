"""Neural detectors built on the network substrate.

Positions are 0-based throughout.  A sliding window of length ``L``
starting at ``j`` covers positions ``j .. j+L-1``; position ``k`` of a
stream of ``n`` symbols is covered by the starts
``max(0, k-L+1) .. min(k, n-L)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .neural.loss import softmax
from .neural.network import NetworkParams, forward, initial_state, rnn_forward_stateful, rnn_step


def _require(net: NetworkParams, detector: str):
    if net.arch.detector != detector:
        raise ValueError(f"expected a {detector} network, got {net.arch.detector}")


def _check_features(net: NetworkParams, r):
    if np.shape(r)[-1] != net.arch.n_features:
        raise ValueError(
            f"feature vector has {np.shape(r)[-1]} entries, checkpoint layout expects {net.arch.n_features}"
        )


def is_valid_pmf(p, tol=1e-6) -> bool:
    p = np.asarray(p)
    return bool(np.all(p >= 0) and np.all(np.abs(p.sum(axis=-1) - 1) <= tol))


def decisions(pmfs) -> np.ndarray:
    return np.argmax(pmfs, axis=-1)


def detect_symbolwise(r, net: NetworkParams) -> np.ndarray:
    """PMF per symbol from that symbol's features alone; ``r`` is ``(..., F)``."""
    _require(net, "symbolwise")
    _check_features(net, r)
    logits, _ = forward(net, r, keep_tape=False)
    return softmax(logits.astype(np.float64))


def detect_stream_rnn(r_k, state, net: NetworkParams):
    """Consume one symbol's features; returns ``(pmf, new_state)``.

    ``state=None`` starts a fresh stream.
    """
    _require(net, "rnn")
    _check_features(net, r_k)
    r = np.asarray(r_k)[None, :]
    if state is None:
        state = initial_state(net, 1)
    logits, state = rnn_step(net, r, state)
    return softmax(logits[0].astype(np.float64)), state


def detect_rnn(features, net: NetworkParams, reset_every_symbol: bool = False) -> np.ndarray:
    """Run the causal detector over whole streams ``(B, n, F)`` or ``(n, F)``.

    With ``reset_every_symbol`` the state is zeroed before each symbol, which
    discards all memory of earlier observations.
    """
    _require(net, "rnn")
    x = np.asarray(features)
    single = x.ndim == 2
    if single:
        x = x[None]
    _check_features(net, x)
    if reset_every_symbol:
        B, n, F = x.shape
        logits, _ = rnn_forward_stateful(net, x.reshape(B * n, 1, F))
        logits = logits.reshape(B, n, -1)
    else:
        logits, _ = rnn_forward_stateful(net, x)
    p = softmax(logits.astype(np.float64))
    return p[0] if single else p


def detect_block_brnn(window, net: NetworkParams) -> np.ndarray:
    """One bidirectional pass over a ``(T, F)`` window; returns ``(T, m)``."""
    _require(net, "brnn")
    x = np.asarray(window)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"window must be (T, F) with T >= 1, got {x.shape}")
    _check_features(net, x)
    logits, _ = forward(net, x[None], keep_tape=False)
    return softmax(logits[0].astype(np.float64))


def window_count(k: int, n: int, L: int) -> int:
    """Number of length-``L`` windows covering position ``k`` (0-based) of a
    length-``n`` stream; a stream shorter than ``L`` is one short window."""
    if n <= L:
        return 1
    return min(k, n - L) - max(0, k - L + 1) + 1


@dataclass(frozen=True)
class Update:
    position: int
    pmf: np.ndarray
    final: bool


WeightFn = Callable[[int, int], float]


def uniform_weight(offset: int, L: int) -> float:
    return 1.0


class SlidingBRNN:
    """Streaming sliding-window bidirectional detector.

    Each :meth:`push` returns the estimates it changed.  Once ``L`` symbols
    have arrived every arrival triggers one window pass over the newest
    ``L`` symbols; the estimate for a position is the weighted mean of all
    window outputs covering it (uniform weights by default).  An update
    with ``final=True`` is the last one ever emitted for that position.
    """

    def __init__(self, net: NetworkParams, L: int = 50, weight: WeightFn = uniform_weight):
        _require(net, "brnn")
        if L < 1:
            raise ValueError(f"window length must be >= 1, got {L}")
        if net.arch.l_max and L > net.arch.l_max:
            raise ValueError(f"window length {L} exceeds the trained maximum {net.arch.l_max}")
        self.net, self.L, self.weight = net, L, weight
        self.buffer: deque = deque(maxlen=L)
        self.n = 0
        self.passes = 0
        self._sum: dict[int, np.ndarray] = {}
        self._wsum: dict[int, float] = {}
        self._last: dict[int, np.ndarray] = {}
        self._finished = False

    def _accumulate(self, start: int, window_pmf: np.ndarray, final_upto: int) -> list[Update]:
        out = []
        T = window_pmf.shape[0]
        for t in range(T):
            pos = start + t
            w = float(self.weight(t, T))
            if pos in self._sum:
                self._sum[pos] = self._sum[pos] + w * window_pmf[t]
                self._wsum[pos] += w
            else:
                self._sum[pos] = w * window_pmf[t]
                self._wsum[pos] = w
            est = self._sum[pos] / self._wsum[pos]
            final = pos <= final_upto
            out.append(Update(pos, est, final))
            if final:
                del self._sum[pos], self._wsum[pos]
                self._last.pop(pos, None)
            else:
                self._last[pos] = est
        return out

    def push(self, r_k) -> list[Update]:
        if self._finished:
            raise RuntimeError("stream already finished")
        _check_features(self.net, r_k)
        self.buffer.append(np.asarray(r_k))
        self.n += 1
        if self.n < self.L:
            return []
        start = self.n - self.L
        pmf = detect_block_brnn(np.stack(self.buffer), self.net)
        self.passes += 1
        return self._accumulate(start, pmf, final_upto=start)

    def finish(self) -> list[Update]:
        """Close the stream and finalize every remaining position."""
        if self._finished:
            return []
        self._finished = True
        if 0 < self.n < self.L:
            pmf = detect_block_brnn(np.stack(self.buffer), self.net)
            self.passes += 1
            return self._accumulate(0, pmf, final_upto=self.n - 1)
        out = [Update(pos, est, True) for pos, est in sorted(self._last.items())]
        self._last.clear()
        self._sum.clear()
        self._wsum.clear()
        return out


def detect_sbrnn(stream: Iterable, net: NetworkParams, L: int = 50,
                 weight: WeightFn = uniform_weight) -> Iterator[Update]:
    """Generator of estimate updates as feature vectors arrive."""
    det = SlidingBRNN(net, L, weight)
    for r in stream:
        yield from det.push(r)
    yield from det.finish()


def final_estimates(updates: Iterable[Update], n: int, m: int) -> np.ndarray:
    out = np.full((n, m), np.nan)
    for u in updates:
        if u.final:
            out[u.position] = u.pmf
    return out


def sbrnn_offline(features, net: NetworkParams, L: int = 50, weight: WeightFn = uniform_weight) -> np.ndarray:
    """Reference computation: every window pass run separately, then the
    weighted average per position in window order."""
    x = np.asarray(features)
    n = x.shape[0]
    if n <= L:
        return detect_block_brnn(x, net)
    m = net.arch.m
    sums = [None] * n
    wsum = np.zeros(n)
    for j in range(n - L + 1):
        p = detect_block_brnn(x[j:j + L], net)
        for t in range(L):
            w = float(weight(t, L))
            sums[j + t] = w * p[t] if sums[j + t] is None else sums[j + t] + w * p[t]
            wsum[j + t] += w
    return np.stack([sums[k] / wsum[k] for k in range(n)]).reshape(n, m)


def sbrnn_batch(features, net: NetworkParams, L: int = 50, chunk: int = 512) -> np.ndarray:
    """Uniform-weight sliding detection of many equal-length streams at once.

    ``features`` is ``(B, n, F)``; all windows are evaluated in batches of
    ``chunk``.  Numerically equivalent to the streaming detector up to
    floating-point summation order.
    """
    _require(net, "brnn")
    x = np.asarray(features)
    B, n, F = x.shape
    Lw = min(L, n)
    n_win = n - Lw + 1
    starts = np.arange(n_win)
    idx = starts[:, None] + np.arange(Lw)[None, :]
    windows = x[:, idx].reshape(B * n_win, Lw, F)
    out = np.empty((B * n_win, Lw, net.arch.m))
    for s in range(0, windows.shape[0], chunk):
        logits, _ = forward(net, windows[s:s + chunk], keep_tape=False)
        out[s:s + chunk] = softmax(logits.astype(np.float64))
    out = out.reshape(B, n_win, Lw, -1)
    acc = np.zeros((B, n, net.arch.m))
    cnt = np.zeros(n)
    for j in range(n_win):
        acc[:, j:j + Lw] += out[:, j]
        cnt[j:j + Lw] += 1
    return acc / cnt[None, :, None]


def block_brnn_batch(features, net: NetworkParams, chunk: int = 512) -> np.ndarray:
    """One bidirectional pass per stream for ``(B, T, F)`` input."""
    _require(net, "brnn")
    x = np.asarray(features)
    out = np.empty(x.shape[:2] + (net.arch.m,))
    for s in range(0, x.shape[0], chunk):
        logits, _ = forward(net, x[s:s + chunk], keep_tape=False)
        out[s:s + chunk] = softmax(logits.astype(np.float64))
    return out

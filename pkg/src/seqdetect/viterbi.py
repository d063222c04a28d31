"""Maximum-likelihood sequence detection for the Poisson channel.

States are base-``m`` encodings of the last ``M`` symbols with the oldest
symbol as the most significant digit, so state ``u`` transitions to
``(u*m + x) mod m**M`` on symbol ``x`` and has the ``m`` predecessors
``u // m + i * m**(M-1)``.  Beam search keeps only the ``N`` best states
per symbol interval; with ``N = m**M`` it is the exact Viterbi algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import DiscretizedResponse, ChannelParams, amplitude_levels, discretize_response

DEFAULT_MEMORY = 99
DEFAULT_BEAM = 100


@dataclass(frozen=True)
class TrellisConfig:
    M: int = DEFAULT_MEMORY
    N_beam: int = DEFAULT_BEAM
    m: int = 2

    def __post_init__(self):
        if self.M < 0 or self.N_beam < 1 or self.m < 2:
            raise ValueError(f"invalid trellis config M={self.M}, N_beam={self.N_beam}, m={self.m}")

    @property
    def effective_beam(self) -> int:
        # m**M overflows floats for M=99; compare without materializing it.
        if self.M * np.log(self.m) < np.log(self.N_beam):
            return self.m**self.M
        return self.N_beam


@dataclass
class TrellisBeam:
    """Surviving states of one symbol interval.

    ``history[i]`` holds the last ``M`` symbol indices of entry ``i``,
    oldest first; ``backpointer[i]`` indexes the previous beam.
    """

    history: np.ndarray
    score: np.ndarray
    backpointer: np.ndarray
    symbol: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def states(self, m: int) -> list[int]:
        out = []
        for row in self.history:
            u = 0
            for d in row:
                u = u * m + int(d)
            out.append(u)
        return out


@dataclass(frozen=True)
class CsiPerturbation:
    sigma_frac: float
    which: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.sigma_frac < 0:
            raise ValueError(f"sigma_frac must be >= 0, got {self.sigma_frac}")


def perturb_csi(params: ChannelParams, pert: CsiPerturbation, rng: np.random.Generator) -> ChannelParams:
    """Add zero-mean Gaussian error with standard deviation ``sigma_frac * value``
    to each listed parameter, redrawing any non-positive result.

    ``eta`` may legitimately be zero, in which case it is left unchanged.
    """
    if pert.sigma_frac == 0:
        return params
    names = pert.which if pert.which is not None else params.csi_names
    changes = {}
    for name in names:
        v = float(getattr(params, name))
        if v == 0:
            continue
        while True:
            est = v + rng.normal(0.0, pert.sigma_frac * abs(v))
            if est > 0:
                break
        changes[name] = est
    return params.with_(**changes)


def state_digits(u: int, M: int, m: int) -> np.ndarray:
    """Base-``m`` digits of state ``u``, oldest symbol first."""
    d = np.zeros(M, dtype=np.int64)
    for i in range(M - 1, -1, -1):
        d[i] = u % m
        u //= m
    return d


def predecessors(u: int, M: int, m: int = 2) -> list[int]:
    if M == 0:
        return [0]
    return [u // m + i * m ** (M - 1) for i in range(m)]


def branch_rate(u_prev: int, u_next: int, resp: DiscretizedResponse, eta: float,
                M: int, m: int = 2) -> np.ndarray:
    """Poisson rates of the ``a`` samples for the transition ``u_prev -> u_next``.

    ``u_next``'s newest digit is the symbol sent in the current interval and
    ``u_prev`` carries the ``M`` preceding symbols.
    """
    if u_prev not in predecessors(u_next, M, m):
        raise ValueError(f"state {u_prev} is not a predecessor of {u_next} (M={M}, m={m})")
    amp = amplitude_levels(m)
    rate = amp[u_next % m] * resp.lam[0] + eta
    hist = state_digits(u_prev, M, m)
    for lag in range(1, min(M, resp.k_mem) + 1):
        rate = rate + amp[hist[M - lag]] * resp.lam[lag]
    return rate


def _poisson_metric(y: np.ndarray, rate: np.ndarray) -> np.ndarray:
    """``sum_j y_j log(rate_j) - rate_j`` along the last axis, with
    ``0 * log 0 = 0`` and ``-inf`` for a positive count at zero rate."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(y > 0, y * np.log(rate), 0.0)
    return logs.sum(axis=-1) - rate.sum(axis=-1)


def branch_metric(y_k, u_prev: int, u_next: int, resp: DiscretizedResponse, eta: float,
                  M: int, m: int = 2) -> float:
    """Log-likelihood increment of a transition, without the ``-sum log y!`` term."""
    y = np.asarray(y_k, dtype=np.float64)
    return float(_poisson_metric(y, branch_rate(u_prev, u_next, resp, eta, M, m)))


def _state_ranks(history: np.ndarray) -> np.ndarray:
    """Rank of each row in state-index order (equal rows share a rank)."""
    n, M = history.shape
    if M == 0:
        return np.zeros(n, dtype=np.int64)
    rows = np.ascontiguousarray(history.astype(np.uint8))
    keys = rows.view(np.dtype((np.void, M))).ravel()
    _, inverse = np.unique(keys, return_inverse=True)
    return inverse.ravel()


def viterbi_decode(counts: np.ndarray, params_est: ChannelParams, cfg: TrellisConfig,
                   resp: DiscretizedResponse | None = None, return_score: bool = False):
    """Beam-search Viterbi detection of a ``K x a`` count matrix.

    The trellis starts in the all-zero state (silence before transmission).
    Ties are resolved toward the lower state index both when pruning and
    when picking the terminal state.
    """
    y = np.asarray(counts, dtype=np.float64)
    K, a = y.shape
    if cfg.m != params_est.m:
        raise ValueError(f"trellis m={cfg.m} does not match channel m={params_est.m}")
    if cfg.m > 256:
        raise ValueError("modulation orders above 256 are not supported")
    if resp is None:
        resp = discretize_response(params_est, max_symbols=max(K, 1))
    if resp.a != a:
        raise ValueError(f"response has {resp.a} samples per symbol, signal has {a}")
    M, m = cfg.M, cfg.m
    n_keep = cfg.effective_beam
    m_eff = min(M, resp.k_mem)
    amp = amplitude_levels(m)
    lam0 = resp.lam[0]
    lam_hist = resp.lam[1:m_eff + 1][::-1]  # rows ordered lag m_eff..1
    eta = float(params_est.eta)

    history = np.zeros((1, M), dtype=np.int64)
    score = np.zeros(1)
    steps: list[tuple[np.ndarray, np.ndarray]] = []
    new_sym = np.arange(m)
    for k in range(K):
        nb = history.shape[0]
        if m_eff:
            isi = amp[history[:, M - m_eff:]] @ lam_hist
        else:
            isi = np.zeros((nb, a))
        rate = isi[:, None, :] + amp[None, :, None] * lam0[None, None, :] + eta
        cand_score = (score[:, None] + _poisson_metric(y[k][None, None, :], rate)).ravel()
        parent = np.repeat(np.arange(nb), m)
        sym = np.tile(new_sym, nb)
        cand_hist = np.concatenate([history[parent, 1:], sym[:, None]], axis=1) if M else np.zeros((nb * m, 0), np.int64)
        ranks = _state_ranks(cand_hist)
        # sort: score descending, state index ascending
        order = np.lexsort((ranks, -cand_score))
        _, first = np.unique(ranks[order], return_index=True)
        keep = order[np.sort(first)][:n_keep]
        history = cand_hist[keep]
        score = cand_score[keep]
        steps.append((parent[keep], sym[keep]))

    best = 0  # beam is ordered by score desc, then state index asc
    decided = np.empty(K, dtype=np.int64)
    idx = best
    for k in range(K - 1, -1, -1):
        parents, syms = steps[k]
        decided[k] = syms[idx]
        idx = parents[idx]
    if return_score:
        return decided, float(score[best]) if K else 0.0
    return decided

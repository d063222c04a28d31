"""Poisson channel simulator for optical and molecular links.

Time is expressed in each channel's natural unit: microseconds for the
optical channel and seconds for the molecular channel.  ``omega`` is the
sampling rate in samples per that unit (2000 samples/us is 2 GS/s), so the
number of samples per symbol is ``a = omega * tau`` in either case.

A unit-amplitude pulse produces the intensity ``lambda(t)``; the expected
count of sample ``j`` (1-based) of the ``k``-th symbol interval after the
pulse is ``lambda((j + k*a) / omega)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import stats
from scipy.special import gammaln

OPTICAL = "optical"
MOLECULAR = "molecular"
KINDS = (OPTICAL, MOLECULAR)

DEFAULT_EPS_TRUNC = 1e-4

# Training-distribution sets for randomized channel parameters.
OPTICAL_BETAS = tuple(round(0.15 + 0.01 * i, 2) for i in range(21))
OPTICAL_ETAS = (1, 10, 20, 50, 100, 200, 500)
OPTICAL_TAUS = (0.025, 0.05, 0.075, 0.1)
MOLECULAR_CS = tuple(range(1, 31))
MOLECULAR_MUS = tuple(range(5, 66, 5))
MOLECULAR_ETAS = (1, 50, 100, 500, 1_000, 5_000, 10_000, 20_000, 30_000, 40_000, 50_000)
MOLECULAR_TAUS = (0.5, 1.0, 1.5, 2.0)

OPTICAL_OMEGA = 2000.0  # samples per microsecond
MOLECULAR_OMEGA = 100.0  # samples per second
OPTICAL_KAPPA = 10.0
MOLECULAR_KAPPA = 1e4


def _integral_ratio(x: float) -> int | None:
    r = round(x)
    if r >= 1 and abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return None


@dataclass(frozen=True)
class ChannelParams:
    """Physical parameters of one simulated link.

    Optical links use ``alpha``/``beta`` (Gamma shape/scale), molecular
    links use ``c``/``mu`` (inverse-Gaussian shape/mean).  The unused pair
    is ignored.
    """

    kind: str
    eta: float
    kappa: float
    omega: float
    tau: float
    m: int = 2
    alpha: float = 2.0
    beta: float = 0.2
    c: float = 8.0
    mu: float = 40.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == OPTICAL and not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"optical channel needs alpha > 0 and beta > 0, got alpha={self.alpha}, beta={self.beta}")
        if self.kind == MOLECULAR and not (self.c > 0 and self.mu > 0):
            raise ValueError(f"molecular channel needs c > 0 and mu > 0, got c={self.c}, mu={self.mu}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"modulation order m must be an integer >= 2, got {self.m}")
        if not (self.omega > 0 and self.tau > 0):
            raise ValueError(f"omega and tau must be positive, got omega={self.omega}, tau={self.tau}")
        if _integral_ratio(self.omega * self.tau) is None:
            raise ValueError(
                f"samples per symbol a = omega*tau = {self.omega * self.tau!r} is not a positive integer "
                f"(omega={self.omega}, tau={self.tau})"
            )

    @classmethod
    def optical(cls, beta=0.2, eta=1.0, tau=0.025, *, alpha=2.0, kappa=OPTICAL_KAPPA,
                omega=OPTICAL_OMEGA, m=2) -> ChannelParams:
        return cls(OPTICAL, eta=eta, kappa=kappa, omega=omega, tau=tau, m=m, alpha=alpha, beta=beta)

    @classmethod
    def molecular(cls, c=8.0, mu=40.0, eta=100.0, tau=0.5, *, kappa=MOLECULAR_KAPPA,
                  omega=MOLECULAR_OMEGA, m=2) -> ChannelParams:
        return cls(MOLECULAR, eta=eta, kappa=kappa, omega=omega, tau=tau, m=m, c=c, mu=mu)

    @property
    def a(self) -> int:
        """Samples per symbol interval."""
        return _integral_ratio(self.omega * self.tau)

    @property
    def csi_names(self) -> tuple[str, ...]:
        """Parameters a model-based detector must know (alpha is held fixed)."""
        return ("beta", "eta") if self.kind == OPTICAL else ("c", "mu", "eta")

    @property
    def shape_name(self) -> str:
        """The response-shape parameter walked by the time-varying channel."""
        return "beta" if self.kind == OPTICAL else "mu"

    def with_(self, **changes) -> ChannelParams:
        return replace(self, **changes)

    def amplitudes(self) -> np.ndarray:
        return amplitude_levels(self.m)


def amplitude_levels(m: int) -> np.ndarray:
    """Equally spaced pulse amplitudes in [0, 1]; index 0 is silence."""
    return np.arange(m, dtype=np.float64) / (m - 1)


@dataclass(frozen=True)
class SymbolSequence:
    symbols: np.ndarray
    m: int = 2

    def __post_init__(self):
        s = np.asarray(self.symbols)
        if s.ndim != 1:
            raise ValueError("symbol sequence must be one-dimensional")
        if s.size and (s.min() < 0 or s.max() >= self.m):
            raise ValueError(f"symbol indices must lie in [0, {self.m - 1}]")
        object.__setattr__(self, "symbols", s.astype(np.int64))

    def __len__(self):
        return len(self.symbols)

    @property
    def amplitudes(self) -> np.ndarray:
        return amplitude_levels(self.m)[self.symbols]


def random_symbols(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. equiprobable symbol indices."""
    return rng.integers(0, m, size=n, dtype=np.int64)


def impulse_response(t, params: ChannelParams):
    """Intensity ``lambda(t)`` following a unit pulse; zero for ``t <= 0``."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    if params.kind == OPTICAL:
        al, be = params.alpha, params.beta
        logv = -al * math.log(be) + (al - 1.0) * np.log(tp) - tp / be - gammaln(al)
        out[pos] = params.kappa * np.exp(logv)
    else:
        c, mu = params.c, params.mu
        # log form: t**3 underflows for tiny t
        with np.errstate(over="ignore", divide="ignore"):
            logv = 0.5 * math.log(c / (2.0 * math.pi)) - 1.5 * np.log(tp) - c * (tp - mu) ** 2 / (2.0 * mu**2 * tp)
        out[pos] = params.kappa * np.exp(logv)
    return out if out.ndim else float(out)


def response_tail(t, params: ChannelParams):
    """Fraction of the pulse's total mass arriving after ``t``."""
    if params.kind == OPTICAL:
        return stats.gamma.sf(t, a=params.alpha, scale=params.beta)
    return stats.invgauss.sf(t, mu=params.mu / params.c, scale=params.c)


def _tail_inverse(eps: float, params: ChannelParams) -> float:
    if params.kind == OPTICAL:
        return float(stats.gamma.isf(eps, a=params.alpha, scale=params.beta))
    return float(stats.invgauss.isf(eps, mu=params.mu / params.c, scale=params.c))


@dataclass(frozen=True)
class DiscretizedResponse:
    """Sampled pulse response: ``lam[k, j-1]`` is ``lambda((j + k*a)/omega)``."""

    lam: np.ndarray
    k_mem: int
    eps_trunc: float
    capped: bool = False

    @property
    def a(self) -> int:
        return self.lam.shape[1]

    def mass(self, omega: float) -> float:
        return float(self.lam.sum() / omega)


def memory_length(params: ChannelParams, eps_trunc: float = DEFAULT_EPS_TRUNC) -> int:
    """Smallest ``K`` such that less than ``eps_trunc`` of the pulse mass
    arrives after symbol interval ``K``."""
    if not 0 < eps_trunc < 1:
        raise ValueError(f"eps_trunc must lie in (0, 1), got {eps_trunc}")
    tau = params.tau
    k = max(0, int(math.ceil(_tail_inverse(eps_trunc, params) / tau)) - 1)
    while response_tail((k + 1) * tau, params) >= eps_trunc:
        k += 1
    while k > 0 and response_tail(k * tau, params) < eps_trunc:
        k -= 1
    return k


def discretize_response(params: ChannelParams, eps_trunc: float = DEFAULT_EPS_TRUNC,
                        max_symbols: int | None = None) -> DiscretizedResponse:
    """Sample the pulse response on the symbol/sample grid.

    ``max_symbols`` caps the number of retained symbol intervals, which is
    all a finite sequence of that length can ever use.
    """
    a = params.a
    k_mem = memory_length(params, eps_trunc)
    capped = False
    if max_symbols is not None and k_mem + 1 > max_symbols:
        k_mem, capped = max(0, max_symbols - 1), True
    j = np.arange(1, a + 1)
    k = np.arange(k_mem + 1)
    t = (j[None, :] + a * k[:, None]) / params.omega
    lam = impulse_response(t, params)
    lam.setflags(write=False)
    return DiscretizedResponse(lam=lam, k_mem=k_mem, eps_trunc=eps_trunc, capped=capped)


def _as_indices(seq, m: int) -> np.ndarray:
    if isinstance(seq, SymbolSequence):
        if seq.m != m:
            raise ValueError(f"sequence modulation order {seq.m} does not match channel m={m}")
        return seq.symbols
    return SymbolSequence(np.asarray(seq), m).symbols


def expected_counts(seq, params: ChannelParams, resp: DiscretizedResponse | None = None) -> np.ndarray:
    """Poisson rate of every sample: superposed ISI plus background ``eta``."""
    x = _as_indices(seq, params.m)
    if resp is None:
        resp = discretize_response(params, max_symbols=len(x))
    amp = amplitude_levels(params.m)[x]
    n = len(x)
    rates = np.full((n, params.a), float(params.eta))
    for i in range(min(n, resp.k_mem + 1)):
        rates[i:] += amp[: n - i, None] * resp.lam[i][None, :]
    return rates


def simulate(seq, params: ChannelParams, rng: np.random.Generator,
             resp: DiscretizedResponse | None = None) -> np.ndarray:
    """Draw a ``K x a`` matrix of received particle counts."""
    rates = expected_counts(seq, params, resp)
    return rng.poisson(rates)


@dataclass(frozen=True)
class TimeVaryingConfig:
    """Per-symbol diffusion with drift of the response shape and noise.

    ``beta_bounds`` clamps the response-shape parameter (``beta`` for optical,
    ``mu`` for molecular links).
    """

    d_diff: float = 0.0
    nu: float = 0.0
    beta_bounds: tuple[float, float] = (0.15, 0.35)
    eta_bounds: tuple[float, float] = (1.0, 200.0)

    def __post_init__(self):
        if self.d_diff < 0:
            raise ValueError(f"d_diff must be >= 0, got {self.d_diff}")
        for name in ("beta_bounds", "eta_bounds"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")

    def check_contains(self, params: ChannelParams):
        s0 = getattr(params, params.shape_name)
        if not (self.beta_bounds[0] <= s0 <= self.beta_bounds[1]):
            raise ValueError(f"initial {params.shape_name}={s0} outside bounds {self.beta_bounds}")
        if not (self.eta_bounds[0] <= params.eta <= self.eta_bounds[1]):
            raise ValueError(f"initial eta={params.eta} outside bounds {self.eta_bounds}")


def parameter_walk(n: int, params0: ChannelParams, tv: TimeVaryingConfig,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shape-parameter and noise trajectories for ``n`` symbol intervals.

    No normals are drawn when ``d_diff == 0``.
    """
    tv.check_contains(params0)
    s0 = getattr(params0, params0.shape_name)
    e0 = params0.eta
    shape = np.empty(n)
    eta = np.empty(n)
    if n == 0:
        return shape, eta
    shape[0], eta[0] = s0, e0
    if tv.d_diff > 0:
        z = rng.standard_normal((n - 1, 2))
    else:
        z = np.zeros((n - 1, 2))
    for i in range(n - 1):
        shape[i + 1] = np.clip(shape[i] + tv.d_diff * s0 * z[i, 0] + tv.nu * s0, *tv.beta_bounds)
        eta[i + 1] = np.clip(eta[i] + tv.d_diff * e0 * z[i, 1] + tv.nu * e0, *tv.eta_bounds)
    return shape, eta


def time_varying_rates(seq, params0: ChannelParams, shape: np.ndarray, eta: np.ndarray,
                       eps_trunc: float = DEFAULT_EPS_TRUNC) -> np.ndarray:
    """Expected counts when the pulse sent in interval ``s`` sees shape
    parameter ``shape[s]`` and interval ``k`` sees background ``eta[k]``."""
    x = _as_indices(seq, params0.m)
    n = len(x)
    amp = amplitude_levels(params0.m)[x]
    rates = np.repeat(np.asarray(eta, dtype=np.float64)[:, None], params0.a, axis=1)
    cache: dict[float, np.ndarray] = {}
    for s in np.flatnonzero(amp):
        key = float(shape[s])
        if key not in cache:
            p = params0.with_(**{params0.shape_name: key})
            cache[key] = discretize_response(p, eps_trunc, max_symbols=n).lam
        lam = cache[key]
        span = min(n - s, lam.shape[0])
        rates[s:s + span] += amp[s] * lam[:span]
    return rates


def simulate_time_varying(seq, params0: ChannelParams, tv: TimeVaryingConfig,
                          rng: np.random.Generator, eps_trunc: float = DEFAULT_EPS_TRUNC,
                          return_walk: bool = False):
    """Simulate a channel whose shape parameter and noise drift per symbol.

    The walk draws from a child stream spawned off ``rng``, so with
    ``d_diff = nu = 0`` the counts equal :func:`simulate` for the same seed.
    """
    x = _as_indices(seq, params0.m)
    walk_rng = rng.spawn(1)[0]
    shape, eta = parameter_walk(len(x), params0, tv, walk_rng)
    if tv.d_diff == 0 and tv.nu == 0:
        rates = expected_counts(x, params0, discretize_response(params0, eps_trunc, max_symbols=len(x)))
    else:
        rates = time_varying_rates(x, params0, shape, eta, eps_trunc)
    counts = rng.poisson(rates)
    if return_walk:
        return counts, shape, eta
    return counts


def sample_random_params(kind: str, rng: np.random.Generator) -> ChannelParams:
    """Draw channel parameters uniformly from the training sets."""
    if kind == OPTICAL:
        return ChannelParams.optical(
            beta=OPTICAL_BETAS[rng.integers(len(OPTICAL_BETAS))],
            eta=float(OPTICAL_ETAS[rng.integers(len(OPTICAL_ETAS))]),
            tau=OPTICAL_TAUS[rng.integers(len(OPTICAL_TAUS))],
        )
    if kind == MOLECULAR:
        return ChannelParams.molecular(
            c=float(MOLECULAR_CS[rng.integers(len(MOLECULAR_CS))]),
            mu=float(MOLECULAR_MUS[rng.integers(len(MOLECULAR_MUS))]),
            eta=float(MOLECULAR_ETAS[rng.integers(len(MOLECULAR_ETAS))]),
            tau=MOLECULAR_TAUS[rng.integers(len(MOLECULAR_TAUS))],
        )
    raise ValueError(f"unknown channel kind {kind!r}")


def sample_pam_params(m: int, rng: np.random.Generator) -> ChannelParams:
    """Optical m-PAM training draw: continuous beta and eta ranges, with
    symbol time and pulse energy scaled by bits per symbol."""
    bits = math.log2(m)
    return ChannelParams.optical(
        beta=float(rng.uniform(0.2, 0.35)),
        eta=float(rng.uniform(10.0, 200.0)),
        tau=round(0.05 * bits, 6),
        kappa=OPTICAL_KAPPA * bits,
        m=m,
    )

"""Experiment harness: BER/SER tables over parameter sweeps.

A detector roster entry is one of

``vd:<sigma>``
    beam Viterbi with channel-state estimates perturbed by relative
    Gaussian error ``sigma`` (``vd:0`` is perfect CSI)
``rnn`` / ``symbolwise``
    the causal RNN or symbol-wise network from the experiment's checkpoint
``sbrnn:<L>``
    sliding bidirectional detector with window ``L``
``brnn``
    one bidirectional pass over the whole sequence

Every table is fully determined by its spec: grid point ``g`` draws test
sequence ``i`` from stream ``(seed, g, i)``.
"""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .channel import (ChannelParams, TimeVaryingConfig, discretize_response, random_symbols, simulate,
                      simulate_time_varying)
from .config import dataclass_from_kv, dataclass_to_kv, read_kv
from .detectors import block_brnn_batch, decisions, detect_rnn, detect_symbolwise, sbrnn_batch
from .features import build_features
from .metrics import ErrorReport, evaluate_errors
from .neural.network import NetworkParams, load_checkpoint
from .rng import substream
from .viterbi import CsiPerturbation, TrellisConfig, perturb_csi, viterbi_decode

CHANNEL_FIELDS = ("beta", "eta", "tau", "c", "mu", "alpha", "kappa")
_CSI_STREAM = 1
_GUARD_STREAM = 2


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "optical"
    beta: float = 0.2
    eta: float = 1.0
    tau: float = 0.025
    c: float = 8.0
    mu: float = 40.0
    alpha: float = 2.0
    kappa: float | None = None
    m: int = 2
    sweep: str = "tau"
    grid: tuple[float, ...] = (0.025,)
    detectors: tuple[str, ...] = ("vd:0",)
    rnn_checkpoint: str | None = None
    brnn_checkpoint: str | None = None
    symbolwise_checkpoint: str | None = None
    M: int = 99
    N_beam: int = 100
    n_seq: int = 1000
    seq_len: int = 100
    seed: int = 0
    d_diff: tuple[float, ...] = (0.0,)
    nu: tuple[float, ...] = (0.0,)
    lengths: tuple[int, ...] = (100, 200, 500, 1000)
    guard: int = 0  # random symbols sent before the payload and excluded from scoring
    tail: int = 0  # silent symbol intervals observed after the payload

    def __post_init__(self):
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if not self.detectors:
            raise ValueError("detector roster is empty")
        for d in self.detectors:
            parse_detector(d)
        if self.sweep not in CHANNEL_FIELDS + ("M", "N_beam", "L", "seq_len"):
            raise ValueError(f"cannot sweep {self.sweep!r}")
        if self.guard < 0 or self.tail < 0:
            raise ValueError("guard and tail lengths must be >= 0")

    @classmethod
    def from_file(cls, path) -> ExperimentSpec:
        return dataclass_from_kv(cls, read_kv(path))

    def to_text(self) -> str:
        return dataclass_to_kv(self)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def params(self, **overrides) -> ChannelParams:
        values = {f: getattr(self, f) for f in CHANNEL_FIELDS}
        values.update({k: v for k, v in overrides.items() if k in CHANNEL_FIELDS})
        if values["kappa"] is None:
            values.pop("kappa")
        if self.kind == "optical":
            for k in ("c", "mu"):
                values.pop(k)
            return ChannelParams.optical(m=self.m, **values)
        for k in ("beta", "alpha"):
            values.pop(k)
        return ChannelParams.molecular(m=self.m, **values)


def parse_detector(name: str) -> tuple[str, float | None]:
    kind, _, arg = name.partition(":")
    if kind == "vd":
        return kind, float(arg or 0)
    if kind == "sbrnn":
        return kind, int(arg or 50)
    if kind in ("rnn", "brnn", "symbolwise") and not arg:
        return kind, None
    raise ValueError(f"unknown detector {name!r}")


@dataclass(frozen=True)
class ResultRow:
    point: tuple[tuple[str, float], ...]
    detector: str
    errors: int
    n_bits: int
    rate: float
    ci_low: float
    ci_high: float
    seconds: float = 0.0

    @classmethod
    def from_report(cls, point, detector, rep: ErrorReport, seconds=0.0) -> ResultRow:
        if not rep.ci_low <= rep.rate <= rep.ci_high or rep.n <= 0:
            raise AssertionError(f"malformed error report for {detector} at {point}")
        return cls(tuple(point), detector, rep.errors, rep.n, rep.rate, rep.ci_low, rep.ci_high, seconds)


@dataclass
class ResultTable:
    spec_digest: str
    columns: tuple[str, ...]
    rows: list[ResultRow] = field(default_factory=list)
    profiles: dict = field(default_factory=dict)

    def get(self, detector: str, **point) -> ResultRow:
        for r in self.rows:
            if r.detector == detector and all(dict(r.point).get(k) == v for k, v in point.items()):
                return r
        raise KeyError(f"no row for {detector} at {point}")

    def to_csv(self, path, timing: bool = False):
        """Write the table.  Wall times vary run to run, so they go to a
        ``.timing.csv`` sidecar only when ``timing`` is set, keeping the main
        file reproducible."""
        path = Path(path)
        try:
            with open(path, "w", newline="") as fh:
                fh.write(f"# spec {self.spec_digest}\n")
                w = csv.writer(fh)
                w.writerow([*self.columns, "detector", "errors", "n_bits", "error_rate", "ci_low", "ci_high"])
                for r in self.rows:
                    w.writerow([*(repr(v) for _, v in r.point), r.detector, int(r.errors), r.n_bits,
                                repr(float(r.rate)), repr(float(r.ci_low)), repr(float(r.ci_high))])
            if timing:
                with open(path.with_suffix(".timing.csv"), "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow([*self.columns, "detector", "seconds"])
                    for r in self.rows:
                        w.writerow([*(repr(v) for _, v in r.point), r.detector, f"{r.seconds:.6f}"])
        except OSError as e:
            raise OSError(f"{path}: cannot write results ({e.strerror or e})") from e

    def write_profiles(self, path):
        """Per-position error profiles as ``point, detector, position, rate``."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write(f"# spec {self.spec_digest}\n")
            w = csv.writer(fh)
            w.writerow([*self.columns, "detector", "position", "error_rate"])
            for (point, det), prof in self.profiles.items():
                for k, v in enumerate(prof):
                    w.writerow([*(repr(x) for _, x in point), det, k, repr(float(v))])


class MissingCheckpoint(ValueError):
    pass


def _load_networks(spec: ExperimentSpec) -> dict[str, NetworkParams]:
    nets = {}
    needed = {"rnn": "rnn", "symbolwise": "symbolwise", "sbrnn": "brnn", "brnn": "brnn"}
    for d in spec.detectors:
        kind, _ = parse_detector(d)
        if kind == "vd":
            continue
        arch = needed[kind]
        path = getattr(spec, f"{arch}_checkpoint")
        if not path:
            raise MissingCheckpoint(f"detector {d!r} needs {arch}_checkpoint in the experiment spec")
        if not Path(path).exists():
            raise MissingCheckpoint(f"detector {d!r}: checkpoint {path} does not exist")
        if arch not in nets:
            net = load_checkpoint(path)
            if net.arch.detector != arch:
                raise MissingCheckpoint(f"detector {d!r}: {path} holds a {net.arch.detector} network")
            nets[arch] = net
    return nets


@dataclass
class TestSet:
    """Transmitted streams and their received counts.

    ``symbols`` and ``counts`` cover the whole stream including any guard
    symbols and silent tail; ``payload`` selects the scored positions.
    """

    params: ChannelParams
    symbols: np.ndarray  # (n, K)
    counts: list[np.ndarray]
    payload: slice = slice(None)

    def features(self, net: NetworkParams) -> np.ndarray:
        fc = net.arch.feature_config
        if fc is None:
            raise ValueError("checkpoint does not record its feature layout")
        return np.stack([build_features(y, self.params.tau, fc) for y in self.counts]).astype(net.dtype)

    @property
    def truth(self) -> np.ndarray:
        return self.symbols[:, self.payload]


def make_test_set(params: ChannelParams, n_seq: int, seq_len: int, seed: int, point: int,
                  tv: TimeVaryingConfig | None = None, guard: int = 0, tail: int = 0) -> TestSet:
    """``n_seq`` streams of ``guard`` random symbols, ``seq_len`` payload
    symbols and ``tail`` silent intervals."""
    total = guard + seq_len + tail
    resp = discretize_response(params, max_symbols=total) if tv is None else None
    xs, ys = [], []
    for i in range(n_seq):
        rng = substream(seed, point, i)
        x = random_symbols(seq_len, params.m, rng)
        if guard or tail:
            g = random_symbols(guard, params.m, substream(seed, point, i, _GUARD_STREAM))
            x = np.concatenate([g, x, np.zeros(tail, dtype=x.dtype)])
        y = simulate(x, params, rng, resp) if tv is None else simulate_time_varying(x, params, tv, rng)
        xs.append(x)
        ys.append(y)
    return TestSet(params, np.stack(xs), ys, slice(guard, guard + seq_len))


def run_detector(name: str, ts: TestSet, nets: dict, spec: ExperimentSpec, point: int,
                 csi_params: ChannelParams | None = None, M: int | None = None, N_beam: int | None = None,
                 L: int | None = None) -> tuple[np.ndarray, float]:
    """Decisions ``(n, K)`` for one roster entry, plus wall time in seconds."""
    kind, arg = parse_detector(name)
    t0 = time.perf_counter()
    if kind == "vd":
        base = csi_params or ts.params
        cfg = TrellisConfig(M if M is not None else spec.M, N_beam or spec.N_beam, base.m)
        pert = CsiPerturbation(float(arg))
        out = []
        resp = discretize_response(base, max_symbols=ts.symbols.shape[1]) if arg == 0 else None
        for i, y in enumerate(ts.counts):
            est = perturb_csi(base, pert, substream(spec.seed, point, i, _CSI_STREAM))
            out.append(viterbi_decode(y, est, cfg, resp if arg == 0 else None))
        dec = np.stack(out)
    else:
        net = nets["brnn" if kind in ("sbrnn", "brnn") else kind]
        X = ts.features(net)
        if kind == "rnn":
            dec = decisions(detect_rnn(X, net))
        elif kind == "symbolwise":
            dec = decisions(detect_symbolwise(X, net))
        elif kind == "brnn":
            dec = decisions(block_brnn_batch(X, net))
        else:
            dec = decisions(sbrnn_batch(X, net, L or arg))
    return dec[:, ts.payload], time.perf_counter() - t0


def run_experiment(spec: ExperimentSpec, out=None, timing: bool = False) -> ResultTable:
    """Sweep ``spec.sweep`` over ``spec.grid``, running every detector on a
    fresh test set per grid point."""
    nets = _load_networks(spec)
    table = ResultTable(spec.digest, (spec.sweep,))
    for g, value in enumerate(spec.grid):
        over = {}
        if spec.sweep in CHANNEL_FIELDS:
            over[spec.sweep] = float(value)
        params = spec.params(**over)
        seq_len = int(value) if spec.sweep == "seq_len" else spec.seq_len
        ts = make_test_set(params, spec.n_seq, seq_len, spec.seed, g, guard=spec.guard, tail=spec.tail)
        for det in spec.detectors:
            dec, secs = run_detector(
                det, ts, nets, spec, g,
                M=int(value) if spec.sweep == "M" else None,
                N_beam=int(value) if spec.sweep == "N_beam" else None,
                L=int(value) if spec.sweep == "L" else None,
            )
            rep = evaluate_errors(dec, ts.truth)
            point = ((spec.sweep, value),)
            table.rows.append(ResultRow.from_report(point, det, rep, secs))
            table.profiles[(point, det)] = rep.per_position
    if out is not None:
        table.to_csv(out, timing)
    return table


def run_timevarying(spec: ExperimentSpec, out=None, seq_len: int = 200, timing: bool = False) -> ResultTable:
    """Sweep every ``(d_diff, nu)`` pair.  Viterbi detectors decode with the
    initial channel state; networks run unchanged."""
    nets = _load_networks(spec)
    params0 = spec.params()
    table = ResultTable(spec.digest, ("d_diff", "nu"))
    g = 0
    for d in spec.d_diff:
        for nu in spec.nu:
            tv = TimeVaryingConfig(d_diff=float(d), nu=float(nu))
            ts = make_test_set(params0, spec.n_seq, seq_len, spec.seed, g, tv, spec.guard, spec.tail)
            for det in spec.detectors:
                dec, secs = run_detector(det, ts, nets, spec, g, csi_params=params0)
                rep = evaluate_errors(dec, ts.truth)
                table.rows.append(ResultRow.from_report((("d_diff", d), ("nu", nu)), det, rep, secs))
            g += 1
    if out is not None:
        table.to_csv(out, timing)
    return table


def run_length_generalization(spec: ExperimentSpec, out=None, profile_out=None,
                              timing: bool = False) -> ResultTable:
    """Evaluate at each sequence length in ``spec.lengths`` and keep the
    per-position error profile of every detector."""
    nets = _load_networks(spec)
    params = spec.params()
    table = ResultTable(spec.digest, ("seq_len",))
    for g, n in enumerate(spec.lengths):
        ts = make_test_set(params, spec.n_seq, int(n), spec.seed, g, guard=spec.guard, tail=spec.tail)
        for det in spec.detectors:
            dec, secs = run_detector(det, ts, nets, spec, g)
            rep = evaluate_errors(dec, ts.truth)
            point = (("seq_len", n),)
            table.rows.append(ResultRow.from_report(point, det, rep, secs))
            table.profiles[(point, det)] = rep.per_position
    if out is not None:
        table.to_csv(out, timing)
    if profile_out is not None:
        table.write_profiles(profile_out)
    return table


def interior_error_rate(profile: np.ndarray, edge: int) -> float:
    return float(np.mean(profile[edge:len(profile) - edge]))


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float


def linear_fit(x, y) -> LinearFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(icpt), r2)


def time_call(fn, repeats: int = 3) -> float:
    """Best-of-``repeats`` wall time of ``fn()``."""
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def decode_timing(kind: str, ns, params: ChannelParams, net: NetworkParams | None = None, L: int = 50,
                  cfg: TrellisConfig | None = None, seed: int = 0, repeats: int = 3) -> tuple[list[float], LinearFit]:
    """Wall time to decode one stream of each length in ``ns`` and the
    least-squares line through the measurements."""
    times = []
    for n in ns:
        rng = substream(seed, int(n))
        x = random_symbols(int(n), params.m, rng)
        y = simulate(x, params, rng)
        if kind == "vd":
            c = cfg or TrellisConfig()
            resp = discretize_response(params, max_symbols=int(n))
            times.append(time_call(lambda: viterbi_decode(y, params, c, resp), repeats))
        elif kind == "sbrnn":
            X = build_features(y, params.tau, net.arch.feature_config).astype(net.dtype)[None]
            times.append(time_call(lambda: sbrnn_batch(X, net, L), repeats))
        else:
            raise ValueError(f"timing not supported for {kind!r}")
    return times, linear_fit(ns, times)


def spec_summary(spec: ExperimentSpec) -> dict:
    return {f.name: getattr(spec, f.name) for f in fields(spec)}


def table_to_dict(table: ResultTable) -> dict:
    return {"spec": table.spec_digest, "columns": list(table.columns), "rows": [asdict(r) for r in table.rows]}

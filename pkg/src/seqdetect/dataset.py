"""Datasets of simulated transmissions and their binary/CSV formats.

Binary layout, all little-endian::

    header : magic b"SQDS" | version u16 | kind u8 | m u8 | omega f64 | n_seq u32
    record : seq_id u32 | alpha beta c mu eta kappa tau (7 x f64) | K u32 | a u32
             | symbols (K x u8) | counts (K*a x u32, row-major)
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .channel import KINDS, ChannelParams, random_symbols, sample_random_params, simulate
from .features import FeatureConfig, build_features
from .rng import substream

MAGIC = b"SQDS"
VERSION = 1
_HEADER = struct.Struct("<4sHBBdI")
_RECORD = struct.Struct("<I7dII")
_PARAM_FIELDS = ("alpha", "beta", "c", "mu", "eta", "kappa", "tau")


class DatasetError(IOError):
    pass


@dataclass
class SequenceRecord:
    params: ChannelParams
    symbols: np.ndarray
    counts: np.ndarray


@dataclass
class Dataset:
    kind: str
    m: int
    omega: float
    records: list[SequenceRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def features(self, config: FeatureConfig, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` with ``X`` of shape ``(n, K, F)`` and labels ``(n, K)``;
        all sequences must share one length."""
        lengths = {len(r.symbols) for r in self.records}
        if len(lengths) != 1:
            raise ValueError(f"sequences have differing lengths {sorted(lengths)}")
        X = np.stack([build_features(r.counts, r.params.tau, config) for r in self.records]).astype(dtype)
        Y = np.stack([r.symbols for r in self.records]).astype(np.int64)
        return X, Y

    def save(self, path):
        path = Path(path)
        try:
            with open(path, "wb") as fh:
                fh.write(_HEADER.pack(MAGIC, VERSION, KINDS.index(self.kind), self.m, self.omega, len(self.records)))
                for i, r in enumerate(self.records):
                    K, a = r.counts.shape
                    if r.counts.size and r.counts.max() > np.iinfo(np.uint32).max:
                        raise DatasetError(f"{path}: sequence {i} has counts beyond the uint32 range")
                    vals = [float(getattr(r.params, f)) for f in _PARAM_FIELDS]
                    fh.write(_RECORD.pack(i, *vals, K, a))
                    fh.write(np.asarray(r.symbols, dtype="u1").tobytes())
                    fh.write(np.asarray(r.counts, dtype="<u4").tobytes())
        except OSError as e:
            raise DatasetError(f"{path}: cannot write dataset ({e.strerror or e})") from e

    @classmethod
    def load(cls, path) -> Dataset:
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as e:
            raise DatasetError(f"{path}: cannot read dataset ({e.strerror or e})") from e
        if len(data) < _HEADER.size:
            raise DatasetError(f"{path}: truncated header")
        magic, version, kind_i, m, omega, n = _HEADER.unpack_from(data, 0)
        if magic != MAGIC or version != VERSION:
            raise DatasetError(f"{path}: not a version-{VERSION} seqdetect dataset")
        kind = KINDS[kind_i]
        off = _HEADER.size
        records = []
        try:
            for _ in range(n):
                _, *vals, K, a = _RECORD.unpack_from(data, off)
                off += _RECORD.size
                symbols = np.frombuffer(data, dtype="u1", count=K, offset=off).astype(np.int64)
                off += K
                counts = np.frombuffer(data, dtype="<u4", count=K * a, offset=off).reshape(K, a).astype(np.int64)
                off += 4 * K * a
                p = dict(zip(_PARAM_FIELDS, vals))
                params = ChannelParams(kind, omega=omega, m=m, **p)
                records.append(SequenceRecord(params, symbols, counts))
        except (struct.error, ValueError) as e:
            raise DatasetError(f"{path}: corrupt record ({e})") from e
        return cls(kind, m, omega, records)

    def export_csv(self, path):
        """One row per symbol: seq_id, k, parameter snapshot, symbol, counts."""
        path = Path(path)
        a_max = max((r.counts.shape[1] for r in self.records), default=0)
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["seq_id", "k", "kind", *_PARAM_FIELDS, "omega", "m", "symbol",
                            *(f"y{j}" for j in range(1, a_max + 1))])
                for i, r in enumerate(self.records):
                    snap = [repr(float(getattr(r.params, f))) for f in _PARAM_FIELDS]
                    for k in range(len(r.symbols)):
                        w.writerow([i, k, self.kind, *snap, repr(float(self.omega)), self.m, int(r.symbols[k]),
                                    *(int(v) for v in r.counts[k])])
        except OSError as e:
            raise DatasetError(f"{path}: cannot write CSV ({e.strerror or e})") from e


def read_csv(path) -> Dataset:
    """Inverse of :meth:`Dataset.export_csv`."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise DatasetError(f"{path}: cannot read CSV ({e.strerror or e})") from e
    rows: dict[int, list] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_fixed = header.index("symbol") + 1
        kind = m = omega = None
        for row in reader:
            sid = int(row[0])
            kind, omega, m = row[2], float(row[10]), int(row[11])
            vals = dict(zip(_PARAM_FIELDS, map(float, row[3:10])))
            counts = [int(v) for v in row[n_fixed:] if v != ""]
            rows.setdefault(sid, [vals, [], []])
            rows[sid][1].append(int(row[n_fixed - 1]))
            rows[sid][2].append(counts)
    recs = [SequenceRecord(ChannelParams(kind, omega=omega, m=m, **v), np.array(s, dtype=np.int64),
                           np.array(c, dtype=np.int64))
            for _, (v, s, c) in sorted(rows.items())]
    return Dataset(kind, m, omega, recs)


def iter_sequences(n_sequences: int, seq_len: int, kind: str, seed: int = 0,
                   params: ChannelParams | None = None,
                   sampler: Callable[[np.random.Generator], ChannelParams] | None = None) -> Iterator[SequenceRecord]:
    """Simulate transmissions of i.i.d. equiprobable symbols one at a time.

    Sequence ``i`` uses its own stream keyed by ``(seed, i)``; its channel
    parameters are ``params`` if given, else drawn by ``sampler`` (default:
    the randomized training distribution for ``kind``).
    """
    if sampler is None:
        sampler = lambda r: sample_random_params(kind, r)  # noqa: E731
    for i in range(n_sequences):
        rng = substream(seed, i)
        p = params if params is not None else sampler(rng)
        if p.kind != kind:
            raise ValueError(f"parameters of kind {p.kind} in a {kind} dataset")
        x = random_symbols(seq_len, p.m, rng)
        yield SequenceRecord(p, x, simulate(x, p, rng))


def generate_dataset(n_sequences: int, seq_len: int, kind: str, seed: int = 0,
                     params: ChannelParams | None = None,
                     sampler: Callable[[np.random.Generator], ChannelParams] | None = None) -> Dataset:
    """All of :func:`iter_sequences` collected into a :class:`Dataset`."""
    records = list(iter_sequences(n_sequences, seq_len, kind, seed, params, sampler))
    if records:
        m, omega = records[0].params.m, records[0].params.omega
    else:
        probe = params or (sampler or (lambda r: sample_random_params(kind, r)))(substream(seed, 0))
        m, omega = probe.m, probe.omega
    return Dataset(kind, m, omega, records)

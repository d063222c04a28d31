"""Training loops for the neural detectors.

The bidirectional detector learns from random contiguous subsequences whose
lengths are uniform on ``2..l_max``; the causal RNN learns from whole
sequences and the symbol-wise net from individual symbols.  Every step
minimizes the mean cross-entropy over all labelled positions in the batch
with Adam.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import KINDS
from .config import dataclass_from_kv, read_kv
from .dataset import Dataset, generate_dataset, iter_sequences
from .features import FeatureConfig, build_features
from .neural.layers import CELLS
from .neural.loss import softmax_cross_entropy
from .neural.network import DETECTORS, Architecture, NetworkParams, backward, forward, init_params, save_checkpoint
from .neural.optim import Adam, clip_by_global_norm, global_norm
from .rng import substream

log = logging.getLogger(__name__)

_INIT_STREAM, _SAMPLE_STREAM = 1, 2
PRECISIONS = {"float32": np.float32, "float64": np.float64}


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    detector: str = "brnn"
    kind: str = "optical"
    cell: str = "lstm"
    n_layers: int = 3
    hidden: int = 80
    l_max: int = 50
    m: int = 2
    lr: float = 1e-3
    batch: int = 500
    budget: int = 500_000  # training examples (subsequences, sequences or symbols) drawn
    seed: int = 0
    precision: str = "float32"
    dataset: str | None = None
    n_train: int = 500_000  # sequences generated when no dataset file is given
    seq_len: int = 100
    data_seed: int | None = None
    gamma: float | None = None  # overrides the channel's feature scaling
    eval_every: int = 0
    n_val: int = 200
    clip_norm: float | None = None
    buckets: int = 4

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.cell not in CELLS:
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")
        if self.detector == "brnn" and self.l_max < 2:
            raise ValueError("l_max must be >= 2")
        if self.batch < 1 or self.budget < 1 or not self.lr > 0:
            raise ValueError("batch, budget and lr must be positive")

    @property
    def steps(self) -> int:
        return math.ceil(self.budget / self.batch)

    @property
    def feature_config(self) -> FeatureConfig:
        fc = FeatureConfig.for_channel(self.kind)
        return fc if self.gamma is None else FeatureConfig(B=fc.B, gamma=self.gamma)

    def architecture(self) -> Architecture:
        fc = self.feature_config
        return Architecture(self.detector, fc.size, self.m, self.cell, self.n_layers, self.hidden,
                            self.l_max if self.detector == "brnn" else 0, fc)

    @classmethod
    def desk(cls, detector: str, kind: str, **overrides) -> TrainConfig:
        """Full-size architecture trained on 20k sequences.

        Budgets give every detector about 5e7 labelled symbols: 2M
        subsequences (mean length 26) for the bidirectional net, 500k whole
        sequences for the causal RNN.  The symbol-wise net gets 2M symbols.
        """
        hidden = {"brnn": 80, "rnn": 160, "symbolwise": 80}[detector]
        budget = {"brnn": 2_000_000, "rnn": 500_000, "symbolwise": 2_000_000}[detector]
        base = dict(detector=detector, kind=kind, hidden=hidden, n_train=20_000, budget=budget)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def full(cls, detector: str, kind: str, **overrides) -> TrainConfig:
        """Full-size architecture with the default 500k-sequence data set."""
        hidden = {"brnn": 80, "rnn": 160, "symbolwise": 80}[detector]
        base = dict(detector=detector, kind=kind, hidden=hidden)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_file(cls, path) -> TrainConfig:
        values = read_kv(path)
        preset = values.pop("preset", None)
        if preset is None:
            return dataclass_from_kv(cls, values)
        if preset not in ("desk", "full"):
            raise ValueError(f"{path}: unknown preset {preset!r}")
        det = values.get("detector", "brnn")
        kind = values.get("kind", "optical")
        return dataclass_from_kv(cls, values, base=getattr(cls, preset)(det, kind))


@dataclass
class TrainingData:
    """Features ``X (n, K, F)`` and labels ``Y (n, K)``."""

    X: np.ndarray
    Y: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, fc: FeatureConfig, dtype=np.float32) -> TrainingData:
        return cls(*ds.features(fc, dtype))

    def __len__(self):
        return self.X.shape[0]


@dataclass
class Minibatch:
    x: np.ndarray
    y: np.ndarray
    lengths: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.x.shape[1])[None, :] < self.lengths[:, None]


def curriculum_sample(data: TrainingData, l_max: int, batch: int, rng: np.random.Generator) -> Minibatch:
    """Random contiguous subsequences with lengths uniform on ``2..l_max``.

    Each draw picks a sequence, a length and an offset uniformly; the batch
    is right-padded to its longest member.
    """
    n, K, F = data.X.shape
    if K < 2:
        raise ValueError("sequences must have at least two symbols")
    top = min(l_max, K)
    seq = rng.integers(n, size=batch)
    lengths = rng.integers(2, top + 1, size=batch)
    offsets = (rng.random(batch) * (K - lengths + 1)).astype(np.int64)
    T = int(lengths.max())
    t = np.arange(T)[None, :]
    pos = np.minimum(offsets[:, None] + t, K - 1)
    valid = t < lengths[:, None]
    x = np.where(valid[..., None], data.X[seq[:, None], pos], 0).astype(data.X.dtype)
    y = np.where(valid, data.Y[seq[:, None], pos], 0)
    return Minibatch(x, y, lengths)


def _split_buckets(mb: Minibatch, n_buckets: int) -> list[Minibatch]:
    # length-sorted groups waste less compute on padding; gradients are unchanged
    order = np.argsort(mb.lengths, kind="stable")
    out = []
    for idx in np.array_split(order, max(1, min(n_buckets, len(order)))):
        if len(idx) == 0:
            continue
        T = int(mb.lengths[idx].max())
        out.append(Minibatch(mb.x[idx, :T], mb.y[idx, :T], mb.lengths[idx]))
    return out


def loss_and_grads(net: NetworkParams, mb: Minibatch, n_buckets: int = 1):
    """Mean cross-entropy over the valid positions of ``mb`` and its gradient."""
    parts = _split_buckets(mb, n_buckets) if n_buckets > 1 else [mb]
    total = int(mb.lengths.sum())
    loss = 0.0
    grads: dict[str, np.ndarray] = {}
    for part in parts:
        lengths = None if net.arch.detector != "brnn" else part.lengths
        logits, tape = forward(net, part.x, lengths=lengths)
        mask = part.mask
        share = mask.sum() / total
        l, dlogits = softmax_cross_entropy(logits, part.y, mask)
        loss += l * share
        g = backward(net, (dlogits * share).astype(logits.dtype), tape)
        for k, v in g.items():
            grads[k] = v if k not in grads else grads[k] + v
    return loss, grads


def evaluate_loss(net: NetworkParams, data: TrainingData, chunk: int = 500) -> float:
    """Mean cross-entropy on held-out sequences (windows of ``l_max`` for
    the bidirectional net)."""
    X, Y = data.X, data.Y
    if net.arch.detector == "brnn" and X.shape[1] > net.arch.l_max:
        L = net.arch.l_max
        K = (X.shape[1] // L) * L
        X = X[:, :K].reshape(-1, L, X.shape[2])
        Y = Y[:, :K].reshape(-1, L)
    if net.arch.detector == "symbolwise":
        X = X.reshape(-1, X.shape[-1])
        Y = Y.reshape(-1)
    total, count = 0.0, 0
    for s in range(0, X.shape[0], chunk):
        logits, _ = forward(net, X[s:s + chunk], keep_tape=False)
        l, _ = softmax_cross_entropy(logits.astype(np.float64), Y[s:s + chunk])
        total += l * Y[s:s + chunk].size
        count += Y[s:s + chunk].size
    return total / count


def draw_batch(cfg: TrainConfig, data: TrainingData, rng: np.random.Generator) -> Minibatch:
    n, K, F = data.X.shape
    if cfg.detector == "brnn":
        return curriculum_sample(data, cfg.l_max, cfg.batch, rng)
    if cfg.detector == "rnn":
        idx = rng.integers(n, size=cfg.batch)
        return Minibatch(data.X[idx], data.Y[idx], np.full(cfg.batch, K))
    flat = rng.integers(n * K, size=cfg.batch)
    x = data.X.reshape(n * K, F)[flat][:, None, :]
    y = data.Y.reshape(n * K)[flat][:, None]
    return Minibatch(x, y, np.ones(cfg.batch, dtype=np.int64))


@dataclass
class TrainResult:
    net: NetworkParams
    config: TrainConfig
    losses: np.ndarray
    val_losses: list[tuple[int, float]] = field(default_factory=list)
    seconds: float = 0.0

    def write_curve(self, path):
        val = dict(self.val_losses)
        path = Path(path)
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "examples", "loss", "val_loss"])
                for i, loss in enumerate(self.losses):
                    w.writerow([i, (i + 1) * self.config.batch, repr(float(loss)),
                                repr(val[i]) if i in val else ""])
        except OSError as e:
            raise OSError(f"{path}: cannot write loss curve ({e.strerror or e})") from e

    def save(self, checkpoint_path, curve_path=None):
        extra = {"train_config": asdict(self.config), "steps": len(self.losses),
                 "final_loss": float(self.losses[-1]) if len(self.losses) else None,
                 "seconds": self.seconds}
        save_checkpoint(checkpoint_path, self.net, extra)
        if curve_path is not None:
            self.write_curve(curve_path)


def load_training_data(cfg: TrainConfig) -> TrainingData:
    dtype = PRECISIONS[cfg.precision]
    if cfg.dataset:
        ds = Dataset.load(cfg.dataset)
        if ds.kind != cfg.kind:
            raise ValueError(f"{cfg.dataset}: dataset holds {ds.kind} sequences, config trains a {cfg.kind} detector")
        if ds.m != cfg.m:
            raise ValueError(f"{cfg.dataset}: dataset uses m={ds.m}, config expects m={cfg.m}")
        return TrainingData.from_dataset(ds, cfg.feature_config, dtype)
    # featurize while simulating so the raw counts never all sit in memory
    seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
    fc = cfg.feature_config
    X = np.empty((cfg.n_train, cfg.seq_len, fc.size), dtype=dtype)
    Y = np.empty((cfg.n_train, cfg.seq_len), dtype=np.int64)
    for i, r in enumerate(iter_sequences(cfg.n_train, cfg.seq_len, cfg.kind, seed=seed)):
        if r.params.m != cfg.m:
            raise ValueError(f"generated sequences use m={r.params.m}, config expects m={cfg.m}")
        X[i] = build_features(r.counts, r.params.tau, fc)
        Y[i] = r.symbols
    return TrainingData(X, Y)


def train(cfg: TrainConfig, data: TrainingData | None = None, val: TrainingData | None = None,
          net: NetworkParams | None = None, progress=None) -> TrainResult:
    """Run ``cfg.steps`` Adam steps and return the trained network.

    Deterministic for a given config and seed.  ``losses[i]`` is the batch
    loss evaluated before update ``i``; ``progress(step, loss, net)`` is
    called after every update.  A non-finite loss aborts with
    :class:`TrainingDiverged`.
    """
    dtype = PRECISIONS[cfg.precision]
    if data is None:
        data = load_training_data(cfg)
    if data.X.shape[-1] != cfg.feature_config.size:
        raise ValueError(f"training features have {data.X.shape[-1]} entries, config expects {cfg.feature_config.size}")
    if net is None:
        net = init_params(cfg.architecture(), substream(cfg.seed, _INIT_STREAM), dtype)
    if cfg.eval_every and val is None:
        seed = (cfg.seed if cfg.data_seed is None else cfg.data_seed) + 7919
        val = TrainingData.from_dataset(generate_dataset(cfg.n_val, cfg.seq_len, cfg.kind, seed=seed),
                                        cfg.feature_config, dtype)
    rng = substream(cfg.seed, _SAMPLE_STREAM)
    opt = Adam(cfg.lr)
    losses = np.empty(cfg.steps)
    val_losses = []
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        mb = draw_batch(cfg, data, rng)
        loss, grads = loss_and_grads(net, mb, cfg.buckets if cfg.detector == "brnn" else 1)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss {loss} at step {step} (lr={cfg.lr}, gradient norm {global_norm(grads):.4g}, "
                f"previous loss {losses[step - 1] if step else float('nan'):.4g})"
            )
        losses[step] = loss
        if cfg.clip_norm:
            clip_by_global_norm(grads, cfg.clip_norm)
        opt.step(net.arrays, grads)
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            val_losses.append((step, evaluate_loss(net, val)))
        if progress is not None:
            progress(step, loss, net)
    return TrainResult(net, cfg, losses, val_losses, time.perf_counter() - t0)

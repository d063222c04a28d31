"""Detector network architectures, parameters, and checkpoints.

Three architectures share one parameter container:

``symbolwise``
    ReLU dense stack on a single symbol's features.
``rnn``
    stacked unidirectional recurrent layers, run causally over the stream.
``brnn``
    stacked bidirectional layers over a window of at most ``l_max`` symbols.

All of them end in one dense layer producing ``m`` logits per position.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..features import FeatureConfig
from . import layers as L

DETECTORS = ("symbolwise", "rnn", "brnn")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    detector: str
    n_features: int
    m: int = 2
    cell: str = "lstm"
    n_layers: int = 3
    hidden: int = 80
    l_max: int = 50
    feature_config: FeatureConfig | None = None

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}; expected one of {DETECTORS}")
        if self.cell not in L.CELLS:
            raise ValueError(f"unknown cell kind {self.cell!r}")
        if self.n_layers < 1 or self.hidden < 1 or self.m < 2 or self.n_features < 1:
            raise ValueError(f"invalid architecture {self}")
        if self.feature_config is not None and self.feature_config.size != self.n_features:
            raise ValueError(
                f"feature config yields {self.feature_config.size} features, architecture expects {self.n_features}"
            )

    @classmethod
    def standard_sbrnn(cls, features: FeatureConfig, m=2, cell="lstm", l_max=50):
        return cls("brnn", features.size, m, cell, 3, 80, l_max, features)

    @classmethod
    def standard_rnn(cls, features: FeatureConfig, m=2, cell="lstm"):
        return cls("rnn", features.size, m, cell, 3, 160, 0, features)

    @classmethod
    def standard_symbolwise(cls, features: FeatureConfig, m=2):
        return cls("symbolwise", features.size, m, "lstm", 3, 80, 0, features)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H, F = self.hidden, self.n_features
        out: dict[str, tuple[int, ...]] = {}
        if self.detector == "symbolwise":
            for i in range(self.n_layers):
                out[f"D{i}.W"] = (F if i == 0 else H, H)
                out[f"D{i}.b"] = (H,)
            top = H
        else:
            G = L.GATES[self.cell]
            dirs = ("fw", "bw") if self.detector == "brnn" else ("",)
            width = H * len(dirs)
            for i in range(self.n_layers):
                fin = F if i == 0 else width
                for d in dirs:
                    p = f"L{i}.{d}." if d else f"L{i}."
                    out[p + "Wx"] = (fin, G * H)
                    out[p + "Wh"] = (H, G * H)
                    out[p + "b"] = (G * H,)
            top = width
        out["out.W"] = (top, self.m)
        out["out.b"] = (self.m,)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_config"] = None if self.feature_config is None else self.feature_config.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Architecture:
        d = dict(d)
        if d.get("feature_config") is not None:
            d["feature_config"] = FeatureConfig(**d["feature_config"])
        return cls(**d)


@dataclass
class NetworkParams:
    arch: Architecture
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = self.arch.shapes()
        missing = set(expected) - set(self.arrays)
        extra = set(self.arrays) - set(expected)
        if missing or extra:
            raise ValueError(f"parameter names mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name} has shape {self.arrays[name].shape}, architecture needs {shape}")

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def dtype(self):
        return self.arrays["out.W"].dtype

    def astype(self, dtype) -> NetworkParams:
        return NetworkParams(self.arch, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self) -> NetworkParams:
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.arrays.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def layer(self, prefix: str) -> dict:
        return {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def init_params(arch: Architecture, rng: np.random.Generator, dtype=np.float32) -> NetworkParams:
    """Uniform(-s, s) weights with ``s = 1/sqrt(fan_in)``; zero biases except
    LSTM forget gates, which start at 1.  The output layer starts at zero so
    the untrained net predicts a uniform PMF whatever the input scale."""
    arrays = {}
    for name, shape in arch.shapes().items():
        if name.endswith(".b"):
            b = np.zeros(shape)
            if arch.cell == "lstm" and name.startswith("L"):
                H = arch.hidden
                b[H:2 * H] = 1.0
            arrays[name] = b.astype(dtype)
        elif name == "out.W":
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            s = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-s, s, size=shape).astype(dtype)
    return NetworkParams(arch, arrays)


def zero_params(arch: Architecture, dtype=np.float32) -> NetworkParams:
    return NetworkParams(arch, {k: np.zeros(s, dtype=dtype) for k, s in arch.shapes().items()})


def _per_step_dense(h, W, b):
    # one matmul per time step keeps results identical to step-wise inference
    out = np.empty(h.shape[:2] + (W.shape[1],), dtype=np.result_type(h, W))
    for t in range(h.shape[1]):
        out[:, t] = h[:, t] @ W + b
    return out


def forward(net: NetworkParams, x, lengths=None, keep_tape=True):
    """Logits for a batch.

    ``x`` is ``(..., F)`` for the symbolwise net and ``(B, T, F)`` for the
    recurrent nets.  Returns ``(logits, tape)``; pass ``keep_tape=False``
    for inference to skip storing activations.
    """
    arch = net.arch
    x = np.asarray(x, dtype=net.dtype)
    if x.shape[-1] != arch.n_features:
        raise L.ShapeError(f"input has {x.shape[-1]} features, network expects {arch.n_features}")
    tape = []
    if arch.detector == "symbolwise":
        h = x
        for i in range(arch.n_layers):
            h, c = L.dense_forward(h, net[f"D{i}.W"], net[f"D{i}.b"], "relu")
            tape.append(c)
        logits, c = L.dense_forward(h, net["out.W"], net["out.b"])
        tape.append(c)
        return logits, tape
    if x.ndim != 3:
        raise L.ShapeError(f"recurrent detectors take (batch, time, features) input, got {x.shape}")
    if arch.detector == "brnn" and arch.l_max and x.shape[1] > arch.l_max:
        raise ValueError(f"window of {x.shape[1]} symbols exceeds the trained maximum {arch.l_max}")
    h = x
    for i in range(arch.n_layers):
        if arch.detector == "brnn":
            h, c = L.bidirectional_forward(arch.cell, h, net.layer(f"L{i}.fw."), net.layer(f"L{i}.bw."), lengths,
                                           keep_cache=keep_tape)
        else:
            h, _, c = L.recurrent_forward(arch.cell, h, net.layer(f"L{i}."), keep_cache=keep_tape)
        tape.append(c)
    logits = _per_step_dense(h, net["out.W"], net["out.b"])
    tape.append((h, net["out.W"], None, None))
    return logits, tape


def backward(net: NetworkParams, dlogits, tape) -> dict[str, np.ndarray]:
    arch = net.arch
    grads: dict[str, np.ndarray] = {}
    top = tape[-1]
    if arch.detector == "symbolwise":
        dh, grads["out.W"], grads["out.b"] = L.dense_backward(dlogits, top)
        for i in range(arch.n_layers - 1, -1, -1):
            dh, grads[f"D{i}.W"], grads[f"D{i}.b"] = L.dense_backward(dh, tape[i])
        return grads
    h = top[0]
    W = net["out.W"]
    d2 = dlogits.reshape(-1, dlogits.shape[-1])
    grads["out.W"] = h.reshape(-1, h.shape[-1]).T @ d2
    grads["out.b"] = d2.sum(axis=0)
    dh = dlogits @ W.T
    for i in range(arch.n_layers - 1, -1, -1):
        if arch.detector == "brnn":
            dh, gf, gb = L.bidirectional_backward(dh, tape[i])
            for k, v in gf.items():
                grads[f"L{i}.fw.{k}"] = v
            for k, v in gb.items():
                grads[f"L{i}.bw.{k}"] = v
        else:
            dh, g = L.recurrent_backward(dh, tape[i])
            for k, v in g.items():
                grads[f"L{i}.{k}"] = v
    return grads


def initial_state(net: NetworkParams, batch: int = 1):
    if net.arch.detector != "rnn":
        raise ValueError("only the rnn detector carries state between symbols")
    return [L.init_state(net.arch.cell, batch, net.arch.hidden, net.dtype) for _ in range(net.arch.n_layers)]


def rnn_step(net: NetworkParams, x_t, state):
    """Advance a stacked unidirectional net by one symbol.

    ``x_t`` is ``(B, F)``; returns ``(logits (B, m), new_state)``.
    """
    arch = net.arch
    x_t = np.asarray(x_t, dtype=net.dtype)
    if len(state) != arch.n_layers:
        raise L.ShapeError(f"state has {len(state)} layers, network has {arch.n_layers}")
    h = x_t
    new_state = []
    for i in range(arch.n_layers):
        h, st = L.recurrent_step(arch.cell, h, state[i], net.layer(f"L{i}."))
        new_state.append(st)
    return h @ net["out.W"] + net["out.b"], new_state


def rnn_forward_stateful(net: NetworkParams, x, state=None):
    """Whole-sequence run of the rnn detector that also returns the final
    state, so a stream can be processed in chunks."""
    x = np.asarray(x, dtype=net.dtype)
    if state is None:
        state = initial_state(net, x.shape[0])
    h = x
    new_state = []
    for i in range(net.arch.n_layers):
        h, st, _ = L.recurrent_forward(net.arch.cell, h, net.layer(f"L{i}."), state[i], keep_cache=False)
        new_state.append(st)
    return _per_step_dense(h, net["out.W"], net["out.b"]), new_state


class CheckpointMismatch(ValueError):
    pass


def save_checkpoint(path, net: NetworkParams, extra: dict | None = None):
    """Write a versioned ``.npz`` container of little-endian named arrays
    plus a JSON header with the architecture and feature layout."""
    meta = {"format": "seqdetect-checkpoint", "version": CHECKPOINT_VERSION,
            "architecture": net.arch.to_dict(), "extra": extra or {}}
    arrays = {k: v.astype(v.dtype.newbyteorder("<")) for k, v in net.arrays.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expect: Architecture | None = None) -> NetworkParams:
    with np.load(path) as z:
        if "__meta__" not in z:
            raise CheckpointMismatch(f"{path} is not a seqdetect checkpoint")
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format") != "seqdetect-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointMismatch(f"{path}: unsupported checkpoint format {meta.get('format')} v{meta.get('version')}")
        arch = Architecture.from_dict(meta["architecture"])
        if expect is not None and arch != expect:
            raise CheckpointMismatch(f"{path}: checkpoint architecture {arch} does not match expected {expect}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return NetworkParams(arch, arrays)


def checkpoint_extra(path) -> dict:
    with np.load(path) as z:
        return json.loads(z["__meta__"].tobytes().decode()).get("extra", {})

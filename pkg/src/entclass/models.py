"""The two CNN-BiLSTM fusion models and the CNN / BiLSTM / MLP baselines.

ARCHI1  conv stack -> flatten (F*N) -> dense projection -> BiLSTM (T=1) -> dense(K)
ARCHI2  conv stack -> (F, N) maps read as N steps of F features -> BiLSTM -> dense(K)
CNN     conv stack -> flatten -> dense stack -> dense(K)
BILSTM  raw length-M vector as M steps of one feature -> BiLSTM -> dense(K)
MLP     dense stack -> dense(K)

Conv blocks are Conv1D -> LeakyReLU -> MaxPool1D. Layer ``i`` is initialized
from ``derive_stream(seed, i)``, so ARCHI1 and ARCHI2 with the same seed
start from the same convolution weights.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

from . import nn, qsim
from ._binfmt import (VersionError, TruncatedError, atomic_write, decode_meta, pack_header, seal,
                      unpack_header, verify_crc)
from .core import derive_stream, float_dtype

ARCHITECTURES = ("ARCHI1", "ARCHI2", "CNN", "BILSTM", "MLP")
CKPT_MAGIC = b"ENTP"
CKPT_VERSION = 1


def default_settings() -> dict:
    """The versioned default model/train settings shipped with the package."""
    text = resources.files(__package__).joinpath("default_config.json").read_text()
    return json.loads(text)


@dataclass
class ModelConfig:
    architecture: str
    M: int
    K: int
    conv: list = field(default_factory=list)
    leaky_slope: float = 0.01
    lstm_hidden: int = 64
    dense_sizes: list = field(default_factory=lambda: [64])
    projection_size: int | None = None
    archi1_steps: int = 1
    summary: str = "last"
    seed: int = 0
    dtype: str | None = None

    @classmethod
    def default(cls, architecture="ARCHI2", M=216, K=6, **overrides) -> "ModelConfig":
        base = dict(default_settings()["model"])
        base.update(architecture=architecture, M=M, K=K)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def for_qubits(cls, architecture, n_qubits, K=None, **overrides) -> "ModelConfig":
        """Defaults sized for the LOCAL_PAULI encoding of ``n_qubits`` qubits."""
        if K is None:
            K = len(qsim.default_roster(n_qubits))
        sized = {"M": 3 ** n_qubits * 2 ** n_qubits, "K": K, **overrides}
        return cls.default(architecture, **sized)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


class AsChannels(nn.Layer):
    """(B, M) -> (B, 1, M)."""

    def output_shape(self, in_shape):
        return (1,) + tuple(in_shape)

    def forward(self, x):
        return x[:, None, :]

    def backward(self, dy):
        return dy[:, 0, :]


class Model:
    def __init__(self, config: ModelConfig, layers: list, trace: list):
        self.config = config
        self.layers = layers
        self.trace = trace  # [(layer repr, in_shape, out_shape)]
        self.dtype = _dtype(config)

    def __repr__(self):
        lines = [f"Model({self.config.architecture}, params={self.param_count()})"]
        lines += [f"  {name:<40} {ins} -> {outs}" for name, ins, outs in self.trace]
        return "\n".join(lines)

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                yield f"{i}.{k}", v

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                yield f"{i}.{k}", layer.grads[k]

    def set_param(self, name, value):
        i, k = name.split(".", 1)
        layer = self.layers[int(i)]
        if isinstance(layer, nn.BiLSTM):
            sub = layer.fwd if k.startswith("fwd.") else layer.bwd
            sub.params[k.split(".", 1)[1]] = value
            layer._sync()
        else:
            layer.params[k] = value

    def param_count(self) -> int:
        return int(sum(v.size for _, v in self.named_params()))

    def logits(self, X):
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim != 2 or X.shape[1] != self.config.M:
            raise ValueError(f"expected feature vectors of length {self.config.M}, got {X.shape}")
        h = X
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def backward(self, dlogits):
        g = dlogits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def predict_proba(self, X, batch=512):
        X = np.atleast_2d(X)
        out = [nn.softmax(self.logits(X[i:i + batch]).astype(np.float64))
               for i in range(0, len(X), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.config.K))

    def predict(self, X, batch=512):
        # np.argmax returns the first maximum: ties go to the lowest label
        return self.predict_proba(X, batch).argmax(axis=1)

    def state(self) -> dict:
        return {k: v.copy() for k, v in self.named_params()}

    def load_state(self, state: dict):
        for k, v in self.named_params():
            if state[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {v.shape}")
        for k in list(dict(self.named_params())):
            self.set_param(k, np.asarray(state[k], dtype=self.dtype).copy())


def _dtype(config):
    return np.dtype(config.dtype) if config.dtype else float_dtype()


def _conv_stack(config, rng_for, dtype, layers):
    channels = 1
    for block in config.conv:
        layers.append(nn.Conv1D(channels, block["out_channels"], block["kernel"],
                                block.get("stride", 1), rng=rng_for(), dtype=dtype))
        layers.append(nn.LeakyReLU(config.leaky_slope))
        if block.get("pool", 1) > 1:
            layers.append(nn.MaxPool1D(block["pool"], block.get("pool_stride")))
        channels = block["out_channels"]
    return channels


def _dense_stack(config, n_in, rng_for, dtype, layers):
    for width in config.dense_sizes:
        layers.append(nn.Dense(n_in, width, rng=rng_for(), dtype=dtype))
        layers.append(nn.LeakyReLU(config.leaky_slope))
        n_in = width
    return n_in


def build(config: ModelConfig) -> Model:
    arch = config.architecture.upper()
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {config.architecture!r}; choose from {ARCHITECTURES}")
    if config.M < 1 or config.K < 2 or config.lstm_hidden < 1:
        raise ValueError("M, K and lstm_hidden must be positive (K >= 2)")
    dtype = _dtype(config)
    layers: list[nn.Layer] = []

    def rng_for():
        return derive_stream(config.seed, len(layers))

    H = config.lstm_hidden
    if arch in ("ARCHI1", "ARCHI2", "CNN"):
        if not config.conv:
            raise ValueError(f"{arch} needs a non-empty conv schedule")
        layers.append(AsChannels())
        F = _conv_stack(config, rng_for, dtype, layers)
        if arch == "ARCHI2":
            layers.append(nn.ToSequence())
            layers.append(nn.BiLSTM(F, H, rng=rng_for(), dtype=dtype, summary=config.summary))
            n = 2 * H
        else:
            layers.append(nn.Flatten())
            shape = _shape_trace(layers, config.M)[-1][2]
            if arch == "ARCHI1":
                proj = config.projection_size or F
                steps = config.archi1_steps
                layers.append(nn.Dense(shape[0], proj, rng=rng_for(), dtype=dtype))
                layers.append(nn.AsSequence(steps))
                layers.append(nn.BiLSTM(proj // steps, H, rng=rng_for(), dtype=dtype,
                                        summary=config.summary))
                n = 2 * H
            else:
                n = _dense_stack(config, shape[0], rng_for, dtype, layers)
    elif arch == "BILSTM":
        layers.append(nn.AsSequence(config.M))
        layers.append(nn.BiLSTM(1, H, rng=rng_for(), dtype=dtype, summary=config.summary))
        n = 2 * H
    else:
        n = _dense_stack(config, config.M, rng_for, dtype, layers)
    layers.append(nn.Dense(n, config.K, rng=rng_for(), dtype=dtype))
    trace = _shape_trace(layers, config.M)
    if trace[-1][2] != (config.K,):
        raise ValueError(f"model output shape {trace[-1][2]} != ({config.K},)")
    return Model(config, layers, trace)


def _shape_trace(layers, M):
    shape = (M,)
    trace = []
    for layer in layers:
        out = tuple(layer.output_shape(shape))
        if min(out) < 1:
            raise ValueError(f"{layer!r} produces empty output {out} from {shape}")
        trace.append((repr(layer), shape, out))
        shape = out
    return trace


def conv_output_shape(config: ModelConfig) -> tuple[int, int]:
    """(F, N) after the conv stack of ``config``."""
    layers = [AsChannels()]
    _conv_stack(config, lambda: np.random.default_rng(0), np.float64, layers)
    return _shape_trace(layers, config.M)[-1][2]


def forward(model: Model, features) -> np.ndarray:
    """Class probabilities for one feature vector (or a batch)."""
    x = np.asarray(features)
    p = model.predict_proba(np.atleast_2d(x))
    return p[0] if x.ndim == 1 else p


def predict(model: Model, features):
    x = np.asarray(features)
    y = model.predict(np.atleast_2d(x))
    return int(y[0]) if x.ndim == 1 else y


def param_count(model: Model) -> int:
    return model.param_count()


def lstm_param_count(n_in: int, hidden: int) -> int:
    """Scalars in one LSTM direction: four gates of (input, recurrent, bias)."""
    return 4 * (n_in * hidden + hidden * hidden + hidden)


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(model: Model, extra: dict | None = None) -> bytes:
    names, shapes, blobs = [], [], []
    for k, v in model.named_params():
        names.append(k)
        shapes.append(list(v.shape))
        blobs.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    meta = {"config": model.config.to_dict(), "tensors": names, "shapes": shapes}
    if extra:
        meta["extra"] = extra
    body = pack_header(CKPT_MAGIC, CKPT_VERSION, meta)
    body += struct.pack("<I", len(names)) + b"".join(blobs)
    return seal(body)


def save_checkpoint(model: Model, path, extra: dict | None = None):
    atomic_write(path, checkpoint_bytes(model, extra))


def load_checkpoint_bytes(buf: bytes) -> Model:
    version, blob, off = unpack_header(buf, CKPT_MAGIC)
    meta = decode_meta(blob)
    sizes = [int(np.prod(s)) for s in meta["shapes"]]
    if len(buf) < off + 4:
        raise TruncatedError("checkpoint ends before the tensor count")
    verify_crc(buf, off + 4 + 4 * sum(sizes) + 4)
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    model = build(ModelConfig.from_dict(meta["config"]))
    off += 4
    state = {}
    for name, shape, size in zip(meta["tensors"], meta["shapes"], sizes):
        state[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
    model.load_state(state)
    return model


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())

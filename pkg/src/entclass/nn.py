"""Hand-differentiated layers: conv1d, LeakyReLU, max-pool, dense, (Bi)LSTM.

Every layer works on a leading batch axis and follows the same protocol::

    y = layer.forward(x)        # caches what backward needs
    dx = layer.backward(dy)     # fills layer.grads, returns d loss / d x

Shapes: conv feature maps are ``(B, channels, length)``, sequences are
``(B, T, features)``, dense activations ``(B, features)``.
"""
from __future__ import annotations

import numpy as np


class Layer:
    """Base class. Stateless layers keep empty ``params``."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def output_shape(self, in_shape: tuple) -> tuple:
        """Per-sample output shape (no batch axis)."""
        return in_shape

    def config(self) -> dict:
        return {"kind": type(self).__name__}

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items() if k != "kind")
        return f"{type(self).__name__}({args})"


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _window_index(length, window, stride):
    n_out = (length - window) // stride + 1
    return stride * np.arange(n_out)[:, None] + np.arange(window)[None, :]


class Conv1D(Layer):
    """Valid cross-correlation (no kernel flip, no padding)."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, rng=None, dtype=np.float64):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride = kernel, stride
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel
        self.params["W"] = _kaiming_uniform(rng, (out_channels, in_channels, kernel), fan_in, dtype)
        bound = 1.0 / np.sqrt(fan_in)
        self.params["b"] = rng.uniform(-bound, bound, size=out_channels).astype(dtype)

    def config(self):
        return {"kind": "Conv1D", "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel, "stride": self.stride}

    def output_shape(self, in_shape):
        c, n = in_shape
        if c != self.in_channels:
            raise ValueError(f"Conv1D expects {self.in_channels} channels, got {c}")
        if n < self.kernel:
            raise ValueError(f"kernel {self.kernel} longer than input length {n}")
        return (self.out_channels, (n - self.kernel) // self.stride + 1)

    def forward(self, x):
        W, b = self.params["W"], self.params["b"]
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ValueError(f"Conv1D expects (B, {self.in_channels}, L), got {x.shape}")
        if x.shape[2] < self.kernel:
            raise ValueError(f"kernel {self.kernel} longer than input length {x.shape[2]}")
        idx = _window_index(x.shape[2], self.kernel, self.stride)
        cols = x[:, :, idx]                                  # (B, C, L', k)
        B, C, L_out, k = cols.shape
        flat = cols.transpose(0, 2, 1, 3).reshape(B, L_out, C * k)
        y = flat @ W.reshape(self.out_channels, C * k).T + b  # (B, L', O)
        self._cache = (x.shape, flat)
        return np.ascontiguousarray(y.transpose(0, 2, 1))

    def backward(self, dy):
        x_shape, flat = self._cache
        W = self.params["W"]
        B, C, L = x_shape
        O, _, k = W.shape
        dy_t = dy.transpose(0, 2, 1)                         # (B, L', O)
        L_out = dy_t.shape[1]
        self.grads["W"] = np.tensordot(dy_t, flat, axes=([0, 1], [0, 1])).reshape(W.shape)
        self.grads["b"] = dy_t.sum(axis=(0, 1))
        dflat = (dy_t @ W.reshape(O, C * k)).reshape(B, L_out, C, k)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        s = self.stride
        span = s * (L_out - 1) + 1
        for t in range(k):
            dx[:, :, t:t + span:s] += dflat[:, :, :, t].transpose(0, 2, 1)
        return dx


class LeakyReLU(Layer):
    """``x if x > 0 else alpha * x``; the derivative at exactly 0 is taken as 1."""

    def __init__(self, alpha=0.01):
        super().__init__()
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        self.alpha = alpha

    def config(self):
        return {"kind": "LeakyReLU", "alpha": self.alpha}

    def forward(self, x):
        self._mask = x >= 0
        return np.where(self._mask, x, self.alpha * x)

    def backward(self, dy):
        return np.where(self._mask, dy, self.alpha * dy)


class MaxPool1D(Layer):
    """Per-channel window max; ties go to the lowest index in the window."""

    def __init__(self, window=2, stride=None):
        super().__init__()
        self.window = window
        self.stride = stride or window

    def config(self):
        return {"kind": "MaxPool1D", "window": self.window, "stride": self.stride}

    def output_shape(self, in_shape):
        c, n = in_shape
        if n < self.window:
            raise ValueError(f"pool window {self.window} longer than input length {n}")
        return (c, (n - self.window) // self.stride + 1)

    def forward(self, x):
        if x.shape[2] < self.window:
            raise ValueError(f"pool window {self.window} longer than input length {x.shape[2]}")
        idx = _window_index(x.shape[2], self.window, self.stride)
        win = x[:, :, idx]
        arg = win.argmax(axis=-1)                  # first occurrence on ties
        self._cache = (x.shape, arg)
        return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        x_shape, arg = self._cache
        dx = np.zeros(x_shape, dtype=dy.dtype)
        s = self.stride
        L_out = dy.shape[2]
        span = s * (L_out - 1) + 1
        for t in range(self.window):
            dx[:, :, t:t + span:s] += np.where(arg == t, dy, 0)
        return dx


class Flatten(Layer):
    """(B, F, N) -> (B, F*N), row-major: channel-major, then position."""

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class ToSequence(Layer):
    """(B, F, N) feature maps -> (B, N, F) sequence: N steps of F features.

    A pure transpose, so no value is changed or mixed.
    """

    def output_shape(self, in_shape):
        f, n = in_shape
        return (n, f)

    def forward(self, x):
        return np.ascontiguousarray(x.transpose(0, 2, 1))

    def backward(self, dy):
        return np.ascontiguousarray(dy.transpose(0, 2, 1))


class AsSequence(Layer):
    """(B, D) -> (B, T, D // T): split a flat vector into T equal steps."""

    def __init__(self, steps=1):
        super().__init__()
        self.steps = steps

    def config(self):
        return {"kind": "AsSequence", "steps": self.steps}

    def output_shape(self, in_shape):
        (d,) = in_shape
        if d % self.steps:
            raise ValueError(f"cannot split {d} features into {self.steps} steps")
        return (self.steps, d // self.steps)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], self.steps, -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    """y = W x + b with W of shape (out, in)."""

    def __init__(self, n_in, n_out, rng=None, dtype=np.float64):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = _kaiming_uniform(rng, (n_out, n_in), n_in, dtype)
        bound = 1.0 / np.sqrt(n_in)
        self.params["b"] = rng.uniform(-bound, bound, size=n_out).astype(dtype)

    def config(self):
        return {"kind": "Dense", "n_in": self.n_in, "n_out": self.n_out}

    def output_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ValueError(f"Dense expects ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"Dense expects (B, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        self.grads["W"] = dy.T @ self._x
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"]


# ---------------------------------------------------------------------------
# recurrent layers


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell(x_t, h_prev, c_prev, params):
    """One LSTM step. Gate blocks of ``Wx``, ``Wh``, ``b`` are ordered i, f, g, o.

    Returns ``(h_t, c_t, cache)``.
    """
    Wx, Wh, b = params["Wx"], params["Wh"], params["b"]
    H = Wh.shape[1]
    z = x_t @ Wx.T + h_prev @ Wh.T + b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x_t, h_prev, c_prev, i, f, g, o, tc)


def lstm_cell_backward(dh, dc, cache, params, grads):
    """Backprop one step; accumulates into ``grads`` and returns (dx, dh_prev, dc_prev)."""
    x_t, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=1)
    grads["Wx"] += dz.T @ x_t
    grads["Wh"] += dz.T @ h_prev
    grads["b"] += dz.sum(axis=0)
    return dz @ params["Wx"], dz @ params["Wh"], dc * f


class LSTM(Layer):
    """Unidirectional LSTM over (B, T, D); returns all hidden states (B, T, H).

    Initial hidden and cell states are zero. Backward is full BPTT.
    """

    def __init__(self, n_in, hidden, rng=None, dtype=np.float64, forget_bias=1.0):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        rng = rng if rng is not None else np.random.default_rng(0)
        k = 1.0 / np.sqrt(hidden)
        self.params["Wx"] = rng.uniform(-k, k, size=(4 * hidden, n_in)).astype(dtype)
        self.params["Wh"] = rng.uniform(-k, k, size=(4 * hidden, hidden)).astype(dtype)
        b = rng.uniform(-k, k, size=4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.params["b"] = b.astype(dtype)

    def config(self):
        return {"kind": "LSTM", "n_in": self.n_in, "hidden": self.hidden}

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ValueError(f"LSTM expects (B, T, {self.n_in}), got {x.shape}")
        B, T, _ = x.shape
        h = np.zeros((B, self.hidden), dtype=x.dtype)
        c = np.zeros_like(h)
        hs = np.empty((B, T, self.hidden), dtype=x.dtype)
        self._caches = []
        for t in range(T):
            h, c, cache = lstm_cell(x[:, t], h, c, self.params)
            hs[:, t] = h
            self._caches.append(cache)
        return hs

    def backward(self, dhs):
        self.zero_grads()
        B, T, H = dhs.shape
        dx = np.empty((B, T, self.n_in), dtype=dhs.dtype)
        dh = np.zeros((B, H), dtype=dhs.dtype)
        dc = np.zeros_like(dh)
        for t in reversed(range(T)):
            dx[:, t], dh, dc = lstm_cell_backward(dhs[:, t] + dh, dc, self._caches[t],
                                                  self.params, self.grads)
        return dx


class BiLSTM(Layer):
    """Forward and backward LSTMs over (B, T, D), summarized to (B, 2H).

    ``summary="last"`` concatenates the forward state after step T-1 with the
    backward state after it has consumed step 0; ``"mean"`` averages each
    direction's hidden states over time. ``forward_steps`` exposes the
    per-step outputs (B, T, 2H) of the last call.
    """

    def __init__(self, n_in, hidden, rng=None, dtype=np.float64, summary="last"):
        super().__init__()
        if summary not in ("last", "mean"):
            raise ValueError(f"unknown summary {summary!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden, self.summary = n_in, hidden, summary
        self.fwd = LSTM(n_in, hidden, rng=rng, dtype=dtype)
        self.bwd = LSTM(n_in, hidden, rng=rng, dtype=dtype)
        self._sync()

    def _sync(self):
        self.params = {**{f"fwd.{k}": v for k, v in self.fwd.params.items()},
                       **{f"bwd.{k}": v for k, v in self.bwd.params.items()}}

    def load_params(self, params):
        for k in ("Wx", "Wh", "b"):
            self.fwd.params[k] = params[f"fwd.{k}"]
            self.bwd.params[k] = params[f"bwd.{k}"]
        self._sync()

    def astype(self, dtype):
        self.fwd.astype(dtype)
        self.bwd.astype(dtype)
        self._sync()
        return self

    def config(self):
        return {"kind": "BiLSTM", "n_in": self.n_in, "hidden": self.hidden, "summary": self.summary}

    def output_shape(self, in_shape):
        t, d = in_shape
        if d != self.n_in:
            raise ValueError(f"BiLSTM expects {self.n_in} features per step, got {d}")
        if t < 1:
            raise ValueError("BiLSTM needs at least one timestep")
        return (2 * self.hidden,)

    def forward(self, x):
        hf = self.fwd.forward(x)
        hb = self.bwd.forward(x[:, ::-1])[:, ::-1]       # hb[:, t] has seen steps t..T-1
        self.steps_out = np.concatenate([hf, hb], axis=2)
        self._T = x.shape[1]
        if self.summary == "last":
            return np.concatenate([hf[:, -1], hb[:, 0]], axis=1)
        return np.concatenate([hf.mean(axis=1), hb.mean(axis=1)], axis=1)

    def backward(self, dy):
        H, T = self.hidden, self._T
        B = dy.shape[0]
        dhf = np.zeros((B, T, H), dtype=dy.dtype)
        dhb = np.zeros((B, T, H), dtype=dy.dtype)
        if self.summary == "last":
            dhf[:, -1] = dy[:, :H]
            dhb[:, 0] = dy[:, H:]
        else:
            dhf[:] = dy[:, None, :H] / T
            dhb[:] = dy[:, None, H:] / T
        dx = self.fwd.backward(dhf)
        dx += self.bwd.backward(dhb[:, ::-1])[:, ::-1]
        self.grads = {**{f"fwd.{k}": v for k, v in self.fwd.grads.items()},
                      **{f"bwd.{k}": v for k, v in self.bwd.grads.items()}}
        return dx


def bilstm(seq, params_fwd, params_bwd, summary="last"):
    """Functional BiLSTM: returns ``(per_step_outputs, summary_vector)`` for (B, T, D)."""
    n_in = params_fwd["Wx"].shape[1]
    hidden = params_fwd["Wh"].shape[1]
    layer = BiLSTM(n_in, hidden, summary=summary)
    layer.load_params({**{f"fwd.{k}": v for k, v in params_fwd.items()},
                       **{f"bwd.{k}": v for k, v in params_bwd.items()}})
    out = layer.forward(seq)
    return layer.steps_out, out


# ---------------------------------------------------------------------------
# loss


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    Accepts a single logit vector with an integer label, or a (B, K) batch.
    """
    single = np.ndim(logits) == 1
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    B, K = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"label out of range [0, {K})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    grad /= B
    return loss, (grad[0] if single else grad)


# ---------------------------------------------------------------------------
# verification


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(layer, x, h=1e-5, tolerance=None, rng=None, richardson=False):
    """Compare analytic gradients of ``layer`` with central differences.

    The scalar checked is ``sum(layer.forward(x) * R)`` for a fixed random R.
    Returns ``{"input": err, <param>: err, ..., "max": err, "passed": bool}``
    where each err is the maximum elementwise relative error. Needs float64.

    ``richardson=True`` combines the central differences at h and h/2 as
    ``(4 D(h/2) - D(h)) / 3``, cancelling the O(h^2) truncation term; use it
    for smooth layers whose gradients have entries far below 1e-5.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)
    if any(p.dtype != np.float64 for p in layer.params.values()):
        raise TypeError("grad_check needs float64 parameters")
    y = layer.forward(x)
    proj = rng.standard_normal(y.shape)

    def f():
        return float(np.sum(layer.forward(x) * proj))

    def central(arr, i, step):
        old = arr[i]
        arr[i] = old + step
        fp = f()
        arr[i] = old - step
        fm = f()
        arr[i] = old
        return (fp - fm) / (2 * step)

    layer.forward(x)
    dx = layer.backward(proj)
    analytic = {"input": dx, **{k: g.copy() for k, g in layer.grads.items()}}
    targets = {"input": x, **layer.params}

    report = {}
    for name, arr in targets.items():
        num = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            d = central(arr, i, h)
            if richardson:
                d = (4 * central(arr, i, h / 2) - d) / 3
            num[i] = d
        report[name] = float(relative_error(analytic[name], num).max())
    report["max"] = max(report.values())
    if tolerance is not None:
        report["passed"] = report["max"] < tolerance
    return report


class SoftmaxCrossEntropy(Layer):
    """Loss as a layer (for gradient checks): logits (B, K) -> [mean loss]."""

    def __init__(self, labels):
        super().__init__()
        self.labels = np.asarray(labels)

    def forward(self, x):
        loss, self._grad = softmax_cross_entropy(x, self.labels)
        return np.array([loss])

    def backward(self, dy):
        return dy[0] * self._grad


SMOOTH_LAYERS = ("lstm", "bilstm")
BATTERY_TOLERANCES = {
    "dense": 1e-7,
    "softmax_cross_entropy": 1e-7,
    "leaky_relu": 1e-8,
    "conv1d": 1e-6,
    "maxpool1d": 1e-6,
    "lstm": 1e-5,
    "bilstm": 1e-5,
}


def _battery_case(name, seed):
    """Random layer and input for one battery entry (float64)."""
    r = np.random.default_rng(seed)
    B = int(r.integers(1, 4))
    if name == "dense":
        n_in, n_out = r.integers(1, 7, size=2)
        return Dense(n_in, n_out, rng=r), r.standard_normal((B, n_in)), 1e-5
    if name == "softmax_cross_entropy":
        K = int(r.integers(2, 8))
        return SoftmaxCrossEntropy(r.integers(0, K, size=B)), r.standard_normal((B, K)), 1e-5
    if name == "leaky_relu":
        x = r.uniform(0.5, 2.0, size=(B, 6)) * r.choice([-1.0, 1.0], size=(B, 6))
        # piecewise linear: any h below min|x| is exact up to round-off
        return LeakyReLU(float(r.uniform(0.01, 0.3))), x, 0.1
    if name == "conv1d":
        C, O, k, s = 2, int(r.integers(1, 4)), int(r.integers(1, 4)), int(r.integers(1, 3))
        L = int(r.integers(k, k + 8))
        return Conv1D(C, O, k, s, rng=r), r.standard_normal((B, C, L)), 1e-5
    if name == "maxpool1d":
        w = int(r.integers(1, 4))
        s = int(r.integers(1, w + 1))
        L = int(r.integers(w, w + 8))
        # distinct values on a grid of spacing 0.01 so +-h never changes an argmax
        vals = r.permutation(2 * B * L)[: B * 2 * L].reshape(B, 2, L) * 0.01
        return MaxPool1D(w, s), vals, 1e-5
    if name == "lstm":
        D, H = int(r.integers(1, 4)), int(r.integers(1, 4))
        return LSTM(D, H, rng=r), r.standard_normal((B, 5, D)), 1e-3
    if name == "bilstm":
        D = int(r.integers(1, 4))
        summary = "last" if seed % 2 == 0 else "mean"
        return BiLSTM(D, 3, rng=r, summary=summary), r.standard_normal((B, 4, D)), 1e-3
    raise KeyError(name)


def run_battery(n_seeds=20, names=None, seed0=0):
    """Grad-check every layer kind over ``n_seeds`` random cases.

    Returns one dict per layer kind: name, tolerance, worst error, passed.
    """
    results = []
    for name in names or BATTERY_TOLERANCES:
        tol = BATTERY_TOLERANCES[name]
        worst = 0.0
        for s in range(seed0, seed0 + n_seeds):
            layer, x, h = _battery_case(name, s)
            rep = grad_check(layer, x, h=h, rng=np.random.default_rng(s + 10_000),
                             richardson=name in SMOOTH_LAYERS)
            worst = max(worst, rep["max"])
        results.append({"layer": name, "tolerance": tol, "max_rel_error": worst,
                        "passed": worst < tol, "cases": n_seeds})
    return results

"""Adam, the mini-batch training loop, classification metrics, and sweeps."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dataset as dsmod
from .dataset import Dataset
from .models import Model, ModelConfig, build, default_settings
from .nn import softmax_cross_entropy
from .qsim import BasisSet, NoiseConfig, SloccFamily

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e3


class NumericDivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    eval_every: int = 0          # 0 = never evaluate during training
    lr_decay_every: int = 0      # 0 = constant learning rate
    lr_decay_factor: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def default(cls, **overrides) -> "TrainConfig":
        d = dict(default_settings()["train"])
        d.update(overrides)
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def adam_step(params: dict, grads: dict, state: dict, t: int, lr=0.01, beta1=0.9,
              beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied in place.

    ``state`` maps each parameter name to its ``(m, v)`` moment arrays and is
    filled lazily. Returns ``(params, state)``.
    """
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        if k not in state:
            state[k] = (np.zeros_like(p), np.zeros_like(p))
        m, v = state[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype)
    return params, state


@dataclass
class LossHistory:
    loss: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)   # None where not evaluated
    epoch_seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "test_accuracy"])
            for i, l in enumerate(self.loss):
                acc = self.test_accuracy[i] if i < len(self.test_accuracy) else None
                w.writerow([i + 1, repr(l), "" if acc is None else repr(acc)])


def _check_data(model: Model, ds: Dataset):
    if ds.M != model.config.M:
        raise ValueError(f"dataset has M={ds.M}, model expects M={model.config.M}")
    if len(ds) and ds.labels.max() >= model.config.K:
        raise ValueError(f"label {ds.labels.max()} out of range for K={model.config.K}")


def train(model: Model, train_set: Dataset, test_set: Dataset | None = None,
          config: TrainConfig | None = None):
    """Train in place with seeded per-epoch shuffling; returns ``(model, history)``."""
    config = config or TrainConfig.default()
    _check_data(model, train_set)
    if test_set is not None:
        _check_data(model, test_set)
    n = len(train_set)
    bs = min(config.batch_size, n)
    rng = np.random.default_rng(config.seed)
    X = train_set.features.astype(model.dtype)
    y = train_set.labels
    state: dict = {}
    t = 0
    hist = LossHistory()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = config.learning_rate
        if config.lr_decay_every:
            lr *= config.lr_decay_factor ** ((epoch - 1) // config.lr_decay_every)
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            logits = model.logits(X[idx])
            loss, dlogits = softmax_cross_entropy(logits.astype(np.float64), y[idx])
            model.backward(dlogits.astype(model.dtype))
            t += 1
            adam_step(dict(model.named_params()), dict(model.named_grads()), state, t,
                      lr, config.beta1, config.beta2, config.adam_eps)
            total += loss * len(idx)
        mean = total / n
        if not np.isfinite(mean) or mean > DIVERGENCE_LIMIT:
            raise NumericDivergenceError(f"epoch {epoch}: mean loss {mean}")
        hist.loss.append(mean)
        hist.epoch_seconds.append(time.perf_counter() - t0)
        acc = None
        if test_set is not None and config.eval_every and epoch % config.eval_every == 0:
            acc = evaluate(model, test_set).accuracy
        hist.test_accuracy.append(acc)
        log.debug("epoch %d loss %.5f acc %s", epoch, mean, acc)
    return model, hist


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    confusion: np.ndarray       # rows = true class, cols = predicted
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    support: np.ndarray

    @classmethod
    def from_predictions(cls, y_true, y_pred, K: int) -> "Metrics":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if len(y_true) == 0:
            raise ValueError("cannot evaluate an empty dataset")
        cm = np.zeros((K, K), dtype=np.int64)
        np.add.at(cm, (y_true, y_pred), 1)
        tp = np.diag(cm).astype(float)
        support = cm.sum(axis=1)
        predicted = cm.sum(axis=0)
        total = cm.sum()
        fp = predicted - tp
        fn = support - tp
        tn = total - tp - fp - fn
        precision = np.divide(tp, predicted, out=np.zeros(K), where=predicted > 0)
        recall = np.divide(tp, support, out=np.zeros(K), where=support > 0)
        denom = precision + recall
        f1 = np.divide(2 * precision * recall, denom, out=np.zeros(K), where=denom > 0)
        neg = fp + tn
        fpr = np.divide(fp, neg, out=np.zeros(K), where=neg > 0)
        return cls(cm, float(tp.sum() / total), precision, recall, f1, recall.copy(), fpr, support)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "tpr": self.tpr.tolist(),
            "fpr": self.fpr.tolist(),
            "support": self.support.tolist(),
        }

    def write_confusion_csv(self, path, names=None):
        K = len(self.confusion)
        names = names or [str(i) for i in range(K)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred"] + list(names))
            for name, row in zip(names, self.confusion):
                w.writerow([name] + row.tolist())


def evaluate(model: Model, ds: Dataset) -> Metrics:
    _check_data(model, ds)
    return Metrics.from_predictions(ds.labels, model.predict(ds.features), model.config.K)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = ["arch", "noise_epsilon", "noise_shots", "size", "repeat", "subsample_seed",
                 "model_seed", "accuracy", "final_loss", "train_seconds"]


def _point_seed(size: int, repeat: int, base: int) -> int:
    return (base * 1_000_003 + size * 101 + repeat) % 2**32


def sweep_sample_size(sizes, base_train: Dataset, test_set: Dataset, model_config: ModelConfig,
                      train_config: TrainConfig | None = None, repeats: int = 1,
                      seed: int = 0, on_row=None) -> list[dict]:
    """Train a fresh model per (size, repeat) on a stratified subsample; one row each.

    Rows hold the columns of ``SWEEP_COLUMNS`` plus ``f1_<c>`` per class.
    Repeat ``r`` uses model seed ``model_config.seed + r``.
    """
    train_config = train_config or TrainConfig.default()
    if max(sizes) > len(base_train):
        raise ValueError(f"largest size {max(sizes)} exceeds the base set ({len(base_train)})")
    rows = []
    for size in sizes:
        for r in range(repeats):
            sub_seed = _point_seed(size, r, seed)
            sub = base_train if size == len(base_train) and repeats == 1 \
                else dsmod.subsample(base_train, size, sub_seed)
            cfg = model_config.with_(seed=model_config.seed + r)
            model = build(cfg)
            t0 = time.perf_counter()
            _, hist = train(model, sub, None, train_config)
            secs = time.perf_counter() - t0
            m = evaluate(model, test_set)
            row = {
                "arch": cfg.architecture,
                "noise_epsilon": base_train.metadata.get("dephasing_epsilon", 0.0),
                "noise_shots": base_train.metadata.get("shots", -1),
                "size": size, "repeat": r, "subsample_seed": sub_seed, "model_seed": cfg.seed,
                "accuracy": m.accuracy,
                "final_loss": hist.loss[-1] if hist.loss else float("nan"),
                "train_seconds": secs,
            }
            row.update({f"f1_{c}": float(v) for c, v in enumerate(m.f1)})
            rows.append(row)
            log.info("%s size=%d repeat=%d acc=%.4f", cfg.architecture, size, r, m.accuracy)
            if on_row:
                on_row(row)
    return rows


def summarize(rows: list[dict], keys=("arch", "noise_epsilon", "noise_shots", "size")) -> list[dict]:
    """Mean/std of accuracy (and per-class F1) over repeats."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        acc = np.array([r["accuracy"] for r in rs])
        d = dict(zip(keys, key))
        d.update(repeats=len(rs), accuracy_mean=float(acc.mean()), accuracy_std=float(acc.std()))
        f1_keys = sorted((k for k in rs[0] if k.startswith("f1_")), key=lambda s: int(s[3:]))
        for k in f1_keys:
            d[f"{k}_mean"] = float(np.mean([r[k] for r in rs]))
        out.append(d)
    return out


def sweep_noise(noise_configs, sizes, roster: list[SloccFamily], bases: BasisSet,
                model_config: ModelConfig, train_config: TrainConfig | None = None,
                repeats: int = 1, train_seed: int = 1, test_seed: int = 2,
                n_test: int = 2000, noisy_train: bool = True, noisy_test: bool = True,
                workers: int = 1, seed: int = 0, on_row=None) -> list[dict]:
    """Per noise setting: regenerate train/test features from the same seeds, then sweep sizes.

    The same root seeds give the same underlying states, so settings differ
    only in the noise applied to the measurement features.
    """
    rows = []
    clean = NoiseConfig()
    for noise in noise_configs:
        tr = dsmod.generate(max(sizes), roster, bases, noise if noisy_train else clean,
                            train_seed, workers=workers)
        te = dsmod.generate(n_test, roster, bases, noise if noisy_test else clean,
                            test_seed, workers=workers)
        pts = sweep_sample_size(sizes, tr, te, model_config, train_config, repeats, seed)
        for p in pts:
            p["noise_epsilon"] = noise.dephasing_epsilon
            p["noise_shots"] = noise.shots
            if on_row:
                on_row(p)
        rows.extend(pts)
    return rows


def write_rows_csv(rows: list[dict], path):
    cols = list(SWEEP_COLUMNS)
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")

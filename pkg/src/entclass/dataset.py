"""Balanced labeled datasets, the ``.entd`` file format, and stratified resampling.

``.entd`` layout (little-endian)::

    "ENTD" | version u16 | meta_len u32 | meta JSON (UTF-8)
    | n_samples u64 | M u32
    | n_samples x (M x f32 features, u16 label)
    | CRC32 of all preceding bytes (u32)
"""
from __future__ import annotations

import csv
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._binfmt import (ChecksumError, FormatError, TruncatedError, VersionError, atomic_write,
                      decode_meta, pack_header, seal, unpack_header, verify_crc)
from .core import derive_stream
from .qsim import (EXACT, BasisSet, NoiseConfig, SloccFamily, build_basis_set, encode_features,
                   make_roster, sample_state, to_density)

__all__ = ["Dataset", "generate", "write", "read", "to_csv", "subsample", "split",
           "FormatError", "VersionError", "TruncatedError", "ChecksumError"]

MAGIC = b"ENTD"
FORMAT_VERSION = 1
# stream id reserved for the label shuffle; per-sample streams use ids 0..n-1
SHUFFLE_STREAM = 2**64 - 1
_COUNTS = struct.Struct("<QI")


@dataclass
class Dataset:
    features: np.ndarray  # (n, M) float32
    labels: np.ndarray    # (n,) int64
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != len(self.features):
            raise ValueError(f"features {self.features.shape} and labels {self.labels.shape} disagree")

    def __len__(self):
        return len(self.labels)

    @property
    def M(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.metadata.get("n_classes", self.labels.max() + 1 if len(self) else 0))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def take(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], dict(self.metadata))

    def __eq__(self, other):
        return (isinstance(other, Dataset)
                and self.metadata == other.metadata
                and np.array_equal(self.labels, other.labels)
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes())


def _make_samples(args):
    start, labels, names, n_qubits, scheme, eps, shots, root_seed = args
    roster = make_roster(names)
    bases = build_basis_set(n_qubits, scheme)
    noise = NoiseConfig(eps, shots)
    out = np.empty((len(labels), bases.M), dtype=np.float32)
    for j, lab in enumerate(labels):
        rng = derive_stream(root_seed, start + j)
        psi = sample_state(roster[lab], rng)
        out[j] = encode_features(to_density(psi), bases, noise, rng)
    return out


def generate(n_samples: int, roster: list[SloccFamily], bases: BasisSet | None = None,
             noise: NoiseConfig = NoiseConfig(), root_seed: int = 0, workers: int = 1,
             chunk: int = 256) -> Dataset:
    """Balanced dataset: labels cycle over the roster, then a seeded shuffle.

    Sample ``i`` draws its state (and shot noise) from
    ``derive_stream(root_seed, i)``, so the result does not depend on
    ``workers``.
    """
    K = len(roster)
    n_qubits = roster[0].n_qubits
    if n_samples < K:
        raise ValueError(f"need at least {K} samples for a balanced {K}-class set")
    bases = bases if bases is not None else build_basis_set(n_qubits)
    if bases.n_qubits != n_qubits:
        raise ValueError("basis set and roster disagree on the qubit count")
    labels = np.arange(n_samples) % K
    derive_stream(root_seed, SHUFFLE_STREAM).shuffle(labels)

    names = [f.name for f in roster]
    jobs = [(s, labels[s:s + chunk].tolist(), names, n_qubits, bases.scheme,
             noise.dephasing_epsilon, noise.shots, root_seed)
            for s in range(0, n_samples, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_make_samples, jobs))
    else:
        parts = [_make_samples(j) for j in jobs]

    meta = {
        "n_qubits": n_qubits,
        "n_classes": K,
        "scheme": bases.scheme,
        "roster": names,
        "dephasing_epsilon": float(noise.dephasing_epsilon),
        "shots": int(noise.shots),
        "root_seed": int(root_seed),
        "creator_version": __version__,
    }
    return Dataset(np.concatenate(parts), labels, meta)


def noise_of(ds: Dataset) -> NoiseConfig:
    m = ds.metadata
    return NoiseConfig(m.get("dephasing_epsilon", 0.0), m.get("shots", EXACT))


def _row_dtype(M):
    return np.dtype([("x", "<f4", (M,)), ("y", "<u2")])


def to_bytes(ds: Dataset) -> bytes:
    if len(ds) and ds.labels.max() > 0xFFFF:
        raise ValueError("labels do not fit in u16")
    rows = np.empty(len(ds), dtype=_row_dtype(ds.M))
    rows["x"] = ds.features
    rows["y"] = ds.labels
    body = pack_header(MAGIC, FORMAT_VERSION, ds.metadata) + _COUNTS.pack(len(ds), ds.M)
    return seal(body + rows.tobytes())


def from_bytes(buf: bytes) -> Dataset:
    version, blob, off = unpack_header(buf, MAGIC)
    if len(buf) < off + _COUNTS.size + 4:
        raise TruncatedError("file ends before the sample count")
    n, M = _COUNTS.unpack_from(buf, off)
    off += _COUNTS.size
    # size check before building the row dtype, so a corrupted M cannot blow up
    verify_crc(buf, off + n * (4 * M + 2) + 4)
    rd = _row_dtype(M)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported .entd version {version} (reader supports {FORMAT_VERSION})")
    meta = decode_meta(blob)
    rows = np.frombuffer(buf, dtype=rd, count=n, offset=off)
    return Dataset(rows["x"].copy(), rows["y"].astype(np.int64), meta)


def write(ds: Dataset, path):
    atomic_write(path, to_bytes(ds))


def read(path) -> Dataset:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def to_csv(ds: Dataset, path):
    """One row per sample: ``f0..f{M-1},label``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(ds.M)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def class_quotas(n: int, K: int) -> list[int]:
    """Per-class counts for n draws: floor(n/K), remainder to the lowest ids."""
    q, r = divmod(n, K)
    return [q + (1 if c < r else 0) for c in range(K)]


def subsample(ds: Dataset, n: int, seed: int) -> Dataset:
    """Class-stratified draw of ``n`` samples without replacement."""
    if n > len(ds):
        raise ValueError(f"cannot draw {n} samples from a set of {len(ds)}")
    K = ds.n_classes
    rng = np.random.default_rng(seed)
    picked = []
    for c, q in enumerate(class_quotas(n, K)):
        idx = np.flatnonzero(ds.labels == c)
        if q > len(idx):
            raise ValueError(f"class {c} has {len(idx)} samples, quota is {q}")
        picked.append(rng.permutation(idx)[:q])
    order = rng.permutation(np.concatenate(picked))
    return ds.take(order)


def split(ds: Dataset, fractions, seed: int) -> tuple[Dataset, ...]:
    """Stratified split into disjoint parts with the given fractions."""
    fr = np.asarray(fractions, dtype=float)
    if fr.ndim != 1 or len(fr) < 2 or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be >= 0 and sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in fr]
    cum = np.concatenate([[0.0], np.cumsum(fr)])
    for c in range(ds.n_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        cuts = np.rint(cum * len(idx)).astype(int)
        for p in range(len(fr)):
            parts[p].append(idx[cuts[p]:cuts[p + 1]])
    out = []
    for chunks in parts:
        idx = np.sort(np.concatenate(chunks))
        out.append(ds.take(idx))
    return tuple(out)

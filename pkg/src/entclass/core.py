"""Numeric foundation shared by the simulator, dataset and network code.

Arrays are plain numpy arrays (row-major, float64 / complex128 unless a
caller asks otherwise).  Random streams are counter-based Philox generators
keyed by ``(root_seed, stream_id)`` so that any stream can be recreated
independently of how many other streams were drawn before it.
"""
from __future__ import annotations

import os

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_stream(root_seed: int, stream_id: int) -> np.random.Generator:
    """Return the random stream identified by ``(root_seed, stream_id)``.

    The pair is used directly as the 128-bit Philox key, so the stream does
    not depend on call order and distinct ids never share a key.
    """
    key = np.array([int(root_seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Tensor product; vectors are treated as column matrices."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim == 1 and b.ndim == 1:
        return (a[:, None] * b[None, :]).reshape(-1)
    a2 = a.reshape(a.shape[0], -1)
    b2 = b.reshape(b.shape[0], -1)
    out = a2[:, None, :, None] * b2[None, :, None, :]
    return out.reshape(a2.shape[0] * b2.shape[0], a2.shape[1] * b2.shape[1])


def kron_all(*mats: np.ndarray) -> np.ndarray:
    out = np.asarray(mats[0], dtype=complex)
    for m in mats[1:]:
        out = kron(out, m)
    return out


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed ``dim x dim`` unitary (QR of a Ginibre matrix).

    The columns of Q are rephased so that R has a positive real diagonal;
    without this step the distribution is not Haar.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))[None, :]


def float_dtype() -> np.dtype:
    """Training dtype: float32 unless ``ENTCLASS_FLOAT64`` is set to a true value."""
    flag = os.environ.get("ENTCLASS_FLOAT64", "").strip().lower()
    return np.dtype(np.float64 if flag in ("1", "true", "yes", "on") else np.float32)

"""Envelope shared by ``.entd`` datasets and ``ENTP`` checkpoints.

Layout (little-endian)::

    magic (4) | version u16 | json length u32 | json | body ... | crc32 u32

The CRC covers every byte before it.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib


class FormatError(ValueError):
    """File is not in the expected format (bad magic, bad JSON)."""


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


_HEAD = struct.Struct("<4sHI")


def pack_header(magic: bytes, version: int, meta: dict) -> bytes:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEAD.pack(magic, version, len(blob)) + blob


def unpack_header(buf: bytes, magic: bytes) -> tuple[int, dict, int]:
    """Return ``(version, meta, offset_after_json)``; does not verify the CRC."""
    if len(buf) < _HEAD.size:
        raise TruncatedError(f"file too short for header ({len(buf)} bytes)")
    got, version, n = _HEAD.unpack_from(buf, 0)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    end = _HEAD.size + n
    if len(buf) < end + 4:
        raise TruncatedError("file ends inside the metadata block")
    return version, buf[_HEAD.size:end], end


def decode_meta(blob: bytes) -> dict:
    try:
        return json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata block: {exc}") from exc


def seal(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def verify_crc(buf: bytes, expected_len: int):
    if len(buf) < expected_len:
        raise TruncatedError(f"expected {expected_len} bytes, file has {len(buf)}")
    if len(buf) > expected_len:
        raise FormatError(f"{len(buf) - expected_len} trailing bytes after checksum")
    (stored,) = struct.unpack_from("<I", buf, expected_len - 4)
    actual = zlib.crc32(buf[:expected_len - 4]) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumError(f"CRC32 mismatch: stored {stored:08x}, computed {actual:08x}")


def atomic_write(path, data: bytes | str):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

import hashlib
import json

import numpy as np
import pytest

from entclass import dataset as D
from entclass import qsim


@pytest.fixture(scope="module")
def roster3():
    return qsim.default_roster(3)


@pytest.fixture(scope="module")
def small(roster3):
    return D.generate(60, roster3, root_seed=7)


def sha(ds):
    return hashlib.sha256(D.to_bytes(ds)).hexdigest()


def test_balanced_600(roster3):
    ds = D.generate(600, roster3, root_seed=1)
    assert len(ds) == 600 and ds.M == 216
    assert ds.class_counts().tolist() == [100] * 6


def test_unbalanced_count_differs_by_at_most_one(roster3):
    counts = D.generate(63, roster3, root_seed=1).class_counts()
    assert counts.max() - counts.min() <= 1


def test_needs_k_samples(roster3):
    with pytest.raises(ValueError):
        D.generate(5, roster3)


def test_metadata(small):
    m = small.metadata
    assert m["n_qubits"] == 3 and m["n_classes"] == 6 and m["scheme"] == "LOCAL_PAULI"
    assert m["roster"][0] == "SEP" and m["shots"] == -1 and m["root_seed"] == 7
    assert m["dephasing_epsilon"] == 0.0 and "creator_version" in m


def test_features_are_f32_probability_blocks(small):
    assert small.features.dtype == np.float32
    blocks = small.features.reshape(len(small), 27, 8).astype(np.float64)
    assert small.features.min() >= 0 and small.features.max() <= 1
    assert np.abs(blocks.sum(axis=2) - 1).max() < 1e-6   # one f32 rounding per entry


def test_generation_is_deterministic(roster3, small):
    assert sha(D.generate(60, roster3, root_seed=7)) == sha(small)
    assert sha(D.generate(60, roster3, root_seed=8)) != sha(small)


def test_worker_count_does_not_matter(roster3):
    a = D.generate(48, roster3, root_seed=3, workers=1, chunk=5)
    b = D.generate(48, roster3, root_seed=3, workers=8, chunk=5)
    c = D.generate(48, roster3, root_seed=3, workers=1, chunk=1000)
    assert sha(a) == sha(b) == sha(c)


def test_sample_i_uses_stream_i(roster3, small):
    from entclass.core import derive_stream
    bases = qsim.build_basis_set(3)
    for i in [0, 17, 59]:
        r = derive_stream(7, i)
        psi = qsim.sample_state(roster3[small.labels[i]], r)
        f = qsim.encode_features(qsim.to_density(psi), bases, qsim.NoiseConfig(), r)
        assert np.array_equal(f.astype(np.float32), small.features[i])


def test_noise_changes_features_only(roster3):
    clean = D.generate(12, roster3, root_seed=5)
    noisy = D.generate(12, roster3, noise=qsim.NoiseConfig(0.0, 20), root_seed=5)
    assert np.array_equal(clean.labels, noisy.labels)
    assert not np.array_equal(clean.features, noisy.features)
    assert np.allclose(noisy.features * 20, np.round(noisy.features * 20), atol=1e-5)
    assert noisy.metadata["shots"] == 20


# file format -----------------------------------------------------------------


def test_roundtrip(tmp_path, roster3):
    ds = D.generate(10, roster3, root_seed=2)
    p = tmp_path / "d.entd"
    D.write(ds, p)
    back = D.read(p)
    assert back == ds
    assert back.features.tobytes() == ds.features.tobytes()


def test_file_size(tmp_path, small):
    p = tmp_path / "d.entd"
    D.write(small, p)
    meta_len = len(json.dumps(small.metadata, sort_keys=True, separators=(",", ":")).encode())
    header = 4 + 2 + 4
    counts = 8 + 4
    expected = header + meta_len + counts + len(small) * (216 * 4 + 2) + 4
    assert p.stat().st_size == expected


def test_header_fields(tmp_path, small):
    buf = D.to_bytes(small)
    assert buf[:4] == b"ENTD"
    assert int.from_bytes(buf[4:6], "little") == D.FORMAT_VERSION
    n = int.from_bytes(buf[6:10], "little")
    assert json.loads(buf[10:10 + n])["roster"] == small.metadata["roster"]
    assert int.from_bytes(buf[10 + n:18 + n], "little") == len(small)
    assert int.from_bytes(buf[18 + n:22 + n], "little") == 216


def test_payload_corruption_detected(small):
    buf = bytearray(D.to_bytes(small))
    buf[len(buf) // 2] ^= 0x01
    with pytest.raises(D.ChecksumError):
        D.from_bytes(bytes(buf))


def test_truncation_detected(small):
    buf = D.to_bytes(small)
    with pytest.raises(D.TruncatedError):
        D.from_bytes(buf[:-10])
    with pytest.raises(D.TruncatedError):
        D.from_bytes(buf[:8])


def test_version_mismatch_detected(small):
    import struct
    import zlib
    buf = bytearray(D.to_bytes(small))
    buf[4:6] = struct.pack("<H", 99)
    body = bytes(buf[:-4])
    buf = body + struct.pack("<I", zlib.crc32(body))
    with pytest.raises(D.VersionError):
        D.from_bytes(buf)


def test_bad_magic(small):
    buf = b"XXXX" + D.to_bytes(small)[4:]
    with pytest.raises(D.FormatError):
        D.from_bytes(buf)


def test_errors_are_distinct():
    assert len({D.ChecksumError, D.TruncatedError, D.VersionError}) == 3
    assert not issubclass(D.ChecksumError, D.TruncatedError)
    assert not issubclass(D.VersionError, D.ChecksumError)


def test_csv_export(tmp_path, small):
    import csv
    p = tmp_path / "d.csv"
    D.to_csv(small, p)
    rows = list(csv.reader(open(p)))
    assert rows[0][-1] == "label" and len(rows[0]) == 217
    assert len(rows) == 61
    assert np.float32(float(rows[1][3])) == small.features[0, 3]
    assert int(rows[5][-1]) == small.labels[4]


# resampling --------------------------------------------------------------


@pytest.fixture(scope="module")
def big(roster3):
    return D.generate(240, roster3, root_seed=11)


def test_quota_rule():
    assert D.class_quotas(100, 10) == [10] * 10
    assert D.class_quotas(100, 6) == [17, 17, 17, 17, 16, 16]


def test_subsample_counts(big):
    sub = D.subsample(big, 100, seed=0)
    assert sub.class_counts().tolist() == [17, 17, 17, 17, 16, 16]


def test_subsample_full_is_permutation(big):
    sub = D.subsample(big, len(big), seed=4)
    key = lambda ds: sorted(zip(ds.labels.tolist(), map(bytes, ds.features)))  # noqa: E731
    assert key(sub) == key(big)


def test_subsample_deterministic_and_seeded(big):
    a, b, c = (D.subsample(big, 50, s) for s in (1, 1, 2))
    assert a == b and a != c


def test_subsample_without_replacement(big):
    sub = D.subsample(big, 120, seed=3)
    rows = {bytes(r) for r in sub.features}
    assert len(rows) == 120


def test_subsample_too_large(big):
    with pytest.raises(ValueError):
        D.subsample(big, 241, seed=0)


def test_subsample_ten_classes():
    ds = D.generate(120, qsim.default_roster(4), root_seed=1)
    assert D.subsample(ds, 100, 0).class_counts().tolist() == [10] * 10


def test_split_two_class():
    feats = np.random.default_rng(0).random((200, 4)).astype(np.float32)
    ds = D.Dataset(feats, np.arange(200) % 2, {"n_classes": 2})
    a, b = D.split(ds, (0.5, 0.5), seed=3)
    assert len(a) == len(b) == 100
    assert a.class_counts().tolist() == [50, 50] and b.class_counts().tolist() == [50, 50]
    rows_a = {bytes(r) for r in a.features}
    rows_b = {bytes(r) for r in b.features}
    assert not rows_a & rows_b
    assert rows_a | rows_b == {bytes(r) for r in feats}


def test_split_stratified(big):
    a, b = D.split(big, (0.75, 0.25), seed=0)
    for part in (a, b):
        counts = part.class_counts()
        assert counts.max() - counts.min() <= 1
    assert len(a) + len(b) == len(big)
    assert D.split(big, (0.75, 0.25), seed=0)[0] == a


@pytest.mark.parametrize("fr", [(0.5, 0.6), (1.0,), (-0.2, 1.2)])
def test_split_invalid(big, fr):
    with pytest.raises(ValueError):
        D.split(big, fr, seed=0)

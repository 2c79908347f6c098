#!/usr/bin/env python3
# Generating, saving and re-reading a labeled dataset.

import os
import tempfile

import numpy as np

from entclass import dataset, qsim

roster = qsim.default_roster(4)
print("4-qubit roster:", [f.name for f in roster])

ds = dataset.generate(200, roster, root_seed=7)
print(len(ds), "samples, M =", ds.M, "per class:", ds.class_counts())
print("metadata:", ds.metadata)

# sample i only depends on (root_seed, i), so worker count does not matter
par = dataset.generate(200, roster, root_seed=7, workers=2, chunk=32)
print("same bytes with 2 workers:", dataset.to_bytes(par) == dataset.to_bytes(ds))

path = os.path.join(tempfile.mkdtemp(), "four_qubit.entd")
dataset.write(ds, path)
back = dataset.read(path)
print("round trip exact:", back == ds, os.path.getsize(path), "bytes")

# flip one byte and the CRC notices
raw = bytearray(open(path, "rb").read())
raw[len(raw) // 2] ^= 1
try:
    dataset.from_bytes(bytes(raw))
except Exception as exc:
    print("corrupted copy:", type(exc).__name__, exc)

# stratified subsets for sample-size experiments
small = dataset.subsample(ds, 30, seed=1)
print("30-sample subset per class:", small.class_counts())
train, test = dataset.split(ds, (0.8, 0.2), seed=3)
print("split sizes:", len(train), len(test), "test per class:", test.class_counts())

# noisy copies keep the same underlying states (same root seed)
noisy = dataset.generate(200, roster, noise=qsim.NoiseConfig(0.1, 100), root_seed=7)
print("mean |clean - noisy| feature difference:",
      float(np.abs(noisy.features - ds.features).mean()))

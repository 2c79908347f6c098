#!/usr/bin/env python3
# Checking hand-written backward passes against finite differences.

import numpy as np

from entclass import nn

rng = np.random.default_rng(1)

conv = nn.Conv1D(2, 3, kernel=3, stride=2, rng=rng, dtype=np.float64)
x = rng.standard_normal((4, 2, 11))
print("conv1d :", nn.grad_check(conv, x))

lstm = nn.LSTM(3, 4, rng=rng, dtype=np.float64)
seq = rng.standard_normal((2, 5, 3))
print("lstm   :", nn.grad_check(lstm, seq, h=1e-3, richardson=True)["max"])

# a BiLSTM over 4 steps, summarized by its last states
bi = nn.BiLSTM(2, 3, rng=rng, dtype=np.float64)
print("bilstm :", nn.grad_check(bi, rng.standard_normal((3, 4, 2)), h=1e-3, richardson=True)["max"])

# plain central differences on the LSTM leave an O(h^2) error behind
for h in (1e-3, 1e-4, 1e-5):
    plain = nn.grad_check(nn.LSTM(3, 4, rng=np.random.default_rng(2), dtype=np.float64), seq, h=h)
    print(f"lstm plain h={h:g}: {plain['max']:.2e}")

# the full battery behind `entclass gradcheck`
for r in nn.run_battery(n_seeds=5):
    print(f"{r['layer']:<22} worst {r['max_rel_error']:.2e}  tol {r['tolerance']:.0e}  "
          f"{'ok' if r['passed'] else 'FAILED'}")

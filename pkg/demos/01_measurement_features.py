#!/usr/bin/env python3
# Measurement features of a few textbook states.
#
# Every state is turned into a feature vector of Born probabilities: one
# block of 2**n outcome probabilities per local Pauli setting (3**n settings).

import numpy as np

from entclass import qsim

np.set_printoptions(precision=3, suppress=True)

bases = qsim.build_basis_set(3)
print("settings:", bases.n_settings, "outcomes per setting:", bases.n_outcomes, "M =", bases.M)

ghz = qsim.to_density(qsim.ghz_state())
w = qsim.to_density(qsim.w_state())

# Z on every qubit: GHZ only ever reads 000 or 111, W reads a single 1
print("GHZ  ZZZ:", qsim.born_probabilities(ghz, bases.vectors[bases.index("ZZZ")]))
print("W    ZZZ:", qsim.born_probabilities(w, bases.vectors[bases.index("ZZZ")]))
# X on every qubit: GHZ has even parity only
print("GHZ  XXX:", qsim.born_probabilities(ghz, bases.vectors[bases.index("XXX")]))

# the full feature vector, and what dephasing does to it
rng = np.random.default_rng(0)
clean = qsim.encode_features(ghz, bases, qsim.NoiseConfig(), rng)
noisy = qsim.encode_features(ghz, bases, qsim.NoiseConfig(dephasing_epsilon=0.5), rng)
shots = qsim.encode_features(ghz, bases, qsim.NoiseConfig(shots=100), rng)
print("feature length:", clean.shape)
print("XXX block clean     :", clean.reshape(-1, 8)[bases.index("XXX")])
print("XXX block eps=0.5   :", noisy.reshape(-1, 8)[bases.index("XXX")])
print("XXX block 100 shots :", shots.reshape(-1, 8)[bases.index("XXX")])
# Z blocks are diagonal-only, so dephasing leaves them alone
print("ZZZ unchanged by dephasing:",
      np.allclose(clean.reshape(-1, 8)[bases.index("ZZZ")], noisy.reshape(-1, 8)[bases.index("ZZZ")]))

# a random member of each family, after Haar-random local unitaries
for fam in qsim.default_roster(3):
    psi = qsim.sample_state(fam, rng)
    f = qsim.encode_features(qsim.to_density(psi), bases, qsim.NoiseConfig(), rng)
    print(f"{fam.name:<11} first block {f[:8]}  block sums ok: {np.allclose(f.reshape(-1, 8).sum(1), 1)}")

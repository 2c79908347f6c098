#!/usr/bin/env python3
# Accuracy against training-set size, with and without noise.
#
# Uses the dense baseline and 30 epochs so this finishes in about a minute;
# swap in "ARCHI2" and the default epochs for the real experiment.

from entclass import qsim, traineval
from entclass.models import ModelConfig
from entclass.traineval import TrainConfig

roster = qsim.default_roster(3)
bases = qsim.build_basis_set(3)
mc = ModelConfig.for_qubits("MLP", 3)
tc = TrainConfig.default(epochs=30)

noises = [qsim.NoiseConfig(), qsim.NoiseConfig(0.1), qsim.NoiseConfig(0.0, 100)]
rows = traineval.sweep_noise(noises, [100, 300, 1000], roster, bases, mc, tc,
                             repeats=2, n_test=1000)
for s in traineval.summarize(rows):
    print(f"eps={s['noise_epsilon']:<4} shots={s['noise_shots']:<4} N={s['size']:<5} "
          f"acc {s['accuracy_mean']:.3f} +- {s['accuracy_std']:.3f}")

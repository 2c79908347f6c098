#!/usr/bin/env python3
# Train the CNN-BiLSTM model on a small 3-qubit set and look at its errors.

import time

import numpy as np

from entclass import dataset, models, qsim, traineval
from entclass.models import ModelConfig
from entclass.traineval import TrainConfig

roster = qsim.default_roster(3)
names = [f.name for f in roster]
train = dataset.generate(300, roster, root_seed=11)
test = dataset.generate(1200, roster, root_seed=12)

cfg = ModelConfig.for_qubits("ARCHI2", 3)
model = models.build(cfg)
print(model)

t0 = time.perf_counter()
_, hist = traineval.train(model, train, test, TrainConfig.default(epochs=40, eval_every=10))
print(f"trained in {time.perf_counter() - t0:.1f}s")
for epoch in (1, 10, 20, 30, 40):
    acc = hist.test_accuracy[epoch - 1]
    print(f"epoch {epoch:>3}  loss {hist.loss[epoch - 1]:.4f}" + (f"  test acc {acc:.3f}" if acc else ""))

m = traineval.evaluate(model, test)
print("accuracy:", round(m.accuracy, 4))
print("confusion (rows true, cols predicted):")
print(" " * 12 + " ".join(f"{n[:6]:>6}" for n in names))
for n, row in zip(names, m.confusion):
    print(f"{n:<12}" + " ".join(f"{v:>6}" for v in row))
for n, f1, tpr, fpr in zip(names, m.f1, m.tpr, m.fpr):
    print(f"{n:<12} F1 {f1:.3f}  TPR {tpr:.3f}  FPR {fpr:.3f}")

# checkpoints reload to the same predictions
again = models.load_checkpoint_bytes(models.checkpoint_bytes(model))
print("reloaded predictions identical:",
      np.array_equal(again.predict(test.features), model.predict(test.features)))

"""The evaluation report on hand-made predictions."""

import numpy as np

from camlink.dataset import generate_instances
from camlink.metrics import evaluate, tune_threshold
from camlink.training import stack

coords, labels, d, k = stack(generate_instances(50, 12, 3, 0.4, seed=4))

# 1. the labels themselves score perfectly
report, _ = evaluate(labels, labels, coords, d, k)
print("labels vs labels\n" + report.to_text())

# 2. predicting every feasible pair: valid links, but far too many of them
dist = np.linalg.norm(coords[:, :, None] - coords[:, None], axis=-1)
feasible = ((dist <= d) & ~np.eye(12, dtype=bool)).astype(float)
report, _ = evaluate(feasible, labels, coords, d, k)
print("every feasible pair\n" + report.to_text())

# 3. noisy probabilities, with the threshold tuned on the same batch
rng = np.random.default_rng(0)
noisy = np.clip(labels * 0.35 + rng.random(labels.shape) * 0.6, 0, 1)
noisy = (noisy + noisy.transpose(0, 2, 1)) / 2
best = tune_threshold(noisy, labels)
report, breakdown = evaluate(noisy, labels, coords, d, k, threshold=best)
print(f"noisy probabilities, threshold {best}\n" + report.to_text())
print("first instance:", breakdown[0])

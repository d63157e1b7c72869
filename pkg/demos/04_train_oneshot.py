"""Train one-shot link predictors with and without a CAM token on small graphs."""

import numpy as np

from camlink.conditioning import ConditionerConfig
from camlink.dataset import generate_instances
from camlink.metrics import accuracy, evaluate
from camlink.models import ModelConfig
from camlink.training import TrainConfig, stack, train

train_set = generate_instances(600, 8, 3, 0.45, seed=0, stream=0)
val_set = generate_instances(100, 8, 3, 0.45, seed=0, stream=1)
test_set = generate_instances(300, 8, 3, 0.45, seed=0, stream=2)
coords, labels, d, k = stack(test_set)
print("all-zeros accuracy:", round(accuracy(np.zeros_like(labels), labels), 4))

variants = {
    "attention": ModelConfig("attention_score"),
    "GT": ModelConfig("graph_transformer", layers=3),
    "GT + CAM": ModelConfig("graph_transformer", layers=3, conditioner=ConditionerConfig("cam2")),
}
for name, cfg in variants.items():
    res = train(train_set, cfg, TrainConfig(epochs=4, lr=3e-3), val=val_set)
    probs = res.bundle.predict(coords, d, k)
    report, _ = evaluate(probs, labels, coords, d, k, threshold=res.bundle.threshold)
    print(f"\n{name}: loss {res.log[0]['loss']:.3f} -> {res.log[-1]['loss']:.3f}, "
          f"threshold {res.bundle.threshold}")
    print(report.to_text().strip())

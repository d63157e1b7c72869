"""The tape-based autodiff engine: gradients, a finite-difference check, AdamW."""

import numpy as np

from camlink import autodiff as ad
from camlink.autodiff import Tensor
from camlink.nn import AdamW, param

rng = np.random.default_rng(0)

# 1. gradient of a small composite expression
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
loss = ad.softmax(ad.matmul(x, w)).sum(axis=0)[0]
loss.backward()
print("d loss / d w:\n", w.grad)

# 2. compare one entry against central differences
h = 1e-5
w.data[1, 0] += h
up = ad.softmax(ad.matmul(x, w)).data.sum(0)[0]
w.data[1, 0] -= 2 * h
down = ad.softmax(ad.matmul(x, w)).data.sum(0)[0]
w.data[1, 0] += h
print("tape:", w.grad[1, 0], " finite difference:", (up - down) / (2 * h))

# 3. AdamW on an anisotropic quadratic
p = param([1.0, -0.7])
opt = AdamW({"p": p}, lr=0.05, weight_decay=0.0)
scales = Tensor([1.0, 3.0])
for step in range(200):
    opt.zero_grad()
    (p * p * scales).sum().backward()
    opt.step()
    if step % 50 == 0:
        print(f"step {step:3d}  p = {p.data}")
print("final:", p.data)

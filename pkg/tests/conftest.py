import numpy as np
import pytest

from camlink.autodiff import Tensor


def numeric_grad(f, x, h=1e-5, coords=None):
    """Central differences of scalar ``f()`` w.r.t. the array ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def rel_err(a, b):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


def grad_check(build, inputs, rng=None, h=1e-5, max_coords=None):
    """Compare tape gradients of ``sum(build(*inputs) * W)`` against finite differences.

    ``inputs`` are tensors with ``requires_grad``; returns the worst
    relative error over inputs.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    out = build(*inputs)
    weights = rng.normal(size=out.shape)

    def scalar():
        return float((build(*inputs).data * weights).sum())

    for t in inputs:
        t.grad = None
    loss = (out * Tensor(weights)).sum()
    loss.backward()
    worst = 0.0
    for t in inputs:
        coords = None
        if max_coords is not None and t.size > max_coords:
            coords = rng.choice(t.size, size=max_coords, replace=False)
        num = numeric_grad(scalar, t.data, h, coords)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        if coords is not None:
            ana, num = ana.reshape(-1)[coords], num.reshape(-1)[coords]
        worst = max(worst, rel_err(ana, num))
    return worst


def leaf(rng, *shape, low=None, high=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

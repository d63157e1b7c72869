"""Parameter containers, initialisation, AdamW and checkpoint I/O."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


class Module:
    """Holds parameters (``Tensor`` attributes) and submodules.

    Parameter paths are dotted attribute names; lists of modules contribute
    their index, e.g. ``blocks.0.attn.wq``.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self):
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def glorot(rng, fan_in, fan_out) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=(fan_in, fan_out)))


def zeros(*shape) -> Tensor:
    return param(np.zeros(shape))


def ones(*shape) -> Tensor:
    return param(np.ones(shape))


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True, zero=False):
        self.w = zeros(d_in, d_out) if zero else glorot(rng, d_in, d_out)
        self.b = zeros(d_out) if bias else None

    def __call__(self, x):
        return ad.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = ones(dim)
        self.bias = zeros(dim)

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    def __init__(self, rng, dim, hidden):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x):
        return self.fc2(ad.relu(self.fc1(x)))


# -- optimiser -------------------------------------------------------------------
def adamw_step(params, lr, betas=(0.9, 0.999), weight_decay=0.01, state=None, eps=1e-8):
    """One AdamW update in place; returns the new optimiser state.

    ``params`` maps names to tensors with populated ``.grad``. Weight decay
    is decoupled (applied to the weights, not folded into the gradient).
    """
    b1, b2 = betas
    state = {"step": 0, "m": {}, "v": {}} if state is None else state
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"adamw_step: parameter {name!r} has no gradient")
    step = state["step"] + 1
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = p.grad
        m = state["m"].get(name)
        v = state["v"].get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state["m"][name], state["v"][name] = m, v
        if lr == 0:
            continue
        p.data = p.data - lr * weight_decay * p.data
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    state["step"] = step
    return state


class AdamW:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), weight_decay=0.01, eps=1e-8):
        self.params = dict(params)
        self.lr, self.betas, self.weight_decay, self.eps = lr, betas, weight_decay, eps
        self.state = {"step": 0, "m": {}, "v": {}}

    def step(self):
        self.state = adamw_step(self.params, self.lr, self.betas, self.weight_decay,
                                self.state, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        out = {}
        for name in self.state["m"]:
            out[f"m.{name}"] = self.state["m"][name]
            out[f"v.{name}"] = self.state["v"][name]
        return out

    def load_state_arrays(self, arrays, step):
        self.state = {"step": int(step), "m": {}, "v": {}}
        for key, arr in arrays.items():
            kind, name = key.split(".", 1)
            self.state[kind][name] = np.array(arr, dtype=np.float64)


# -- checkpoints -----------------------------------------------------------------
_MAGIC = b"CAMCKPT1"


def save_checkpoint(path, arrays, meta=None):
    """Write ``{name: float64 array}`` plus JSON metadata to one file.

    Layout: magic, little-endian u64 header length, UTF-8 JSON header
    (names, shapes, offsets, metadata), then the concatenated ``<f8`` data.
    """
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"entries": entries, "meta": meta or {}}, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(arrays, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    data = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    arrays = {}
    for e in header["entries"]:
        chunk = data[e["offset"]:e["offset"] + e["count"]]
        arrays[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return arrays, header["meta"]

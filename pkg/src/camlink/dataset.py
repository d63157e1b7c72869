"""Labelled instance records: generation, serialisation, loading.

One JSON object per line::

    {"index": 0, "n": 16, "k": 3, "d": 0.4, "coords": [x0, y0, x1, ...],
     "label": "0110..."}

``label`` is the strict upper triangle of the adjacency, row by row.
Floats are written with 17 significant digits. A sidecar
``<file>.manifest.json`` records generation parameters and dataset-wide
statistics; its ``edge_marginal`` is the diffusion stationary edge rate.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .solver import connected_components, pairwise_distances, sample_coords, solve_exact

FORMAT_VERSION = 1


@dataclass
class Instance:
    coords: np.ndarray
    k: int
    d: float
    label: np.ndarray
    index: int = 0

    @property
    def n(self):
        return len(self.coords)

    def check(self):
        """Raise ``ValueError`` if the label breaks any structural invariant."""
        lab = self.label
        if not np.array_equal(lab, lab.T) or np.any(np.diag(lab)):
            raise ValueError(f"instance {self.index}: label not symmetric with zero diagonal")
        if np.any(lab.sum(1) > self.k):
            raise ValueError(f"instance {self.index}: degree above k={self.k}")
        if np.any(pairwise_distances(self.coords)[lab > 0] > self.d):
            raise ValueError(f"instance {self.index}: edge longer than d={self.d}")
        c, _ = connected_components(lab)
        if lab.sum() // 2 != self.n - c:
            raise ValueError(f"instance {self.index}: label is not a forest")


def _fmt(x):
    return format(float(x), ".17g")


def encode_label(adj) -> str:
    iu = np.triu_indices(len(adj), 1)
    return "".join("1" if v else "0" for v in np.asarray(adj)[iu])


def decode_label(bits: str, n: int) -> np.ndarray:
    adj = np.zeros((n, n), dtype=np.int8)
    iu = np.triu_indices(n, 1)
    if len(bits) != len(iu[0]):
        raise ValueError(f"label has {len(bits)} bits, expected {len(iu[0])} for n={n}")
    adj[iu] = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
    return adj | adj.T


def format_record(inst: Instance, extra=None) -> str:
    """Serialise one instance as a JSON line (without newline)."""
    parts = [
        f'"index": {int(inst.index)}',
        f'"n": {inst.n}',
        f'"k": {int(inst.k)}',
        f'"d": {_fmt(inst.d)}',
        '"coords": [' + ", ".join(_fmt(v) for v in np.asarray(inst.coords).reshape(-1)) + "]",
        f'"label": "{encode_label(inst.label)}"',
    ]
    for key, value in (extra or {}).items():
        parts.append(f"{json.dumps(key)}: {json.dumps(value)}")
    return "{" + ", ".join(parts) + "}"


def parse_record(line: str):
    rec = json.loads(line)
    n = int(rec["n"])
    coords = np.array(rec["coords"], dtype=np.float64).reshape(n, 2)
    inst = Instance(coords, int(rec["k"]), float(rec["d"]), decode_label(rec["label"], n), int(rec["index"]))
    extra = {key: v for key, v in rec.items() if key not in {"index", "n", "k", "d", "coords", "label"}}
    return inst, extra


def write_records(path, instances, extras=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, inst in enumerate(instances):
            fh.write(format_record(inst, None if extras is None else extras[i]) + "\n")


def load_records(path, with_extra=False):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(parse_record(line))
    return out if with_extra else [inst for inst, _ in out]


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


def load_manifest(path):
    return json.loads(manifest_path(path).read_text())


def solve_instance(args):
    index, n, k, d, seed, stream = args
    coords = sample_coords(n, [seed, stream, index])
    res = solve_exact(coords, k, d)
    return Instance(coords, k, d, res.adjacency, index)


def generate_instances(count, n, k, d, seed, stream=0, workers=1):
    jobs = [(i, n, k, d, seed, stream) for i in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve_instance, jobs, chunksize=16))
    return [solve_instance(job) for job in jobs]


def dataset_stats(instances):
    pairs = sum(inst.n * (inst.n - 1) // 2 for inst in instances)
    edges = sum(int(inst.label.sum()) // 2 for inst in instances)
    comps = [connected_components(inst.label)[0] for inst in instances]
    return {
        "edge_marginal": edges / pairs if pairs else 0.0,
        "mean_components": float(np.mean(comps)) if comps else 0.0,
    }


def generate_dataset(count, n, k, d, seed, out_path, stream=0, workers=1):
    """Sample, solve and write ``count`` instances; returns the manifest dict.

    Instance ``i`` draws its points from the seed ``[seed, stream, i]``, so
    output is independent of ``workers`` and of completion order.
    """
    instances = generate_instances(count, n, k, d, seed, stream, workers)
    write_records(out_path, instances)
    manifest = {
        "count": count,
        "n": n,
        "k": k,
        "d": d,
        "seed": seed,
        "stream": stream,
        "format_version": FORMAT_VERSION,
        **dataset_stats(instances),
    }
    manifest_path(out_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest

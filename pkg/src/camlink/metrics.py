"""Link-set quality metrics.

Batch arguments are stacked arrays ``(B, n, n)``; a single ``(n, n)``
matrix is treated as a batch of one. Accuracy and variance look only at
the strict upper triangle.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .solver import connected_components, pairwise_distances

REPORT_FIELDS = (
    "accuracy",
    "variance",
    "cc",
    "isolated_pct",
    "saturated_pct",
    "link_validity_pct",
    "link_count_ratio",
)


@dataclass
class MetricsReport:
    accuracy: float
    variance: float
    cc: float
    isolated_pct: float
    saturated_pct: float
    link_validity_pct: float
    link_count_ratio: float

    def as_dict(self):
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"{key}={format(float(val), '.17g')}" for key, val in self.as_dict().items()]
        lines.append(f"link_count_deviation={(self.link_count_ratio - 1.0) * 100:+.1f}%")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls(**{key: float(values[key]) for key in REPORT_FIELDS})


def _batch(a):
    a = np.asarray(a)
    return a[None] if a.ndim == 2 else a


def _upper(a):
    a = _batch(a)
    iu = np.triu_indices(a.shape[-1], 1)
    return a[:, iu[0], iu[1]]


def accuracy(pred_prob, label, threshold=0.5) -> float:
    """Fraction of node pairs where ``pred >= threshold`` agrees with the label."""
    pred = _upper(pred_prob) >= threshold
    return float((pred == (_upper(label) > 0)).mean())


def prediction_variance(pred_prob) -> float:
    """Population variance of all pair probabilities pooled over the batch."""
    # sorted so the floating-point sum does not depend on node order
    return float(np.sort(_upper(pred_prob).reshape(-1)).var())


def cc_excluding_isolated(pred_binary) -> float:
    """Component count ignoring degree-0 nodes, averaged over the batch."""
    counts = []
    for adj in _batch(pred_binary):
        adj = (np.asarray(adj) > 0).astype(np.int8)
        active = adj.sum(1) > 0
        if not active.any():
            counts.append(0)
            continue
        sub = adj[np.ix_(active, active)]
        counts.append(connected_components(sub)[0])
    return float(np.mean(counts))


def isolated_pct(pred_binary) -> float:
    deg = (_batch(pred_binary) > 0).sum(-1)
    return float((deg == 0).mean())


def saturated_pct(pred_binary, k) -> float:
    deg = (_batch(pred_binary) > 0).sum(-1)
    return float((deg > k).mean())


def link_validity(pred_binary, coords, d) -> float:
    """Share of predicted edges no longer than ``d``; 1.0 if nothing is predicted."""
    pred = _batch(pred_binary) > 0
    coords = np.asarray(coords, dtype=np.float64)
    coords = coords[None] if coords.ndim == 2 else coords
    iu = np.triu_indices(pred.shape[-1], 1)
    valid = total = 0
    for adj, c in zip(pred, coords):
        chosen = adj[iu]
        lengths = pairwise_distances(c)[iu][chosen]
        total += chosen.sum()
        valid += (lengths <= d).sum()
    return 1.0 if total == 0 else float(valid / total)


def link_count_ratio(pred_binary, label) -> float:
    """Mean predicted edge count over mean label edge count."""
    pred_edges = _upper(_batch(pred_binary) > 0).sum(-1).mean()
    label_edges = _upper(_batch(label) > 0).sum(-1).mean()
    if label_edges == 0:
        if pred_edges == 0:
            return 1.0
        raise ValueError("link_count_ratio: labels contain no edges")
    return float(pred_edges / label_edges)


def evaluate(pred, labels, coords, d, k, threshold=0.5, binary=None):
    """All seven metrics plus a per-instance breakdown.

    ``pred`` holds probabilities or 0/1 samples; binary metrics use
    ``pred >= threshold``.
    """
    pred = _batch(pred).astype(np.float64)
    labels = _batch(labels)
    coords = np.asarray(coords, dtype=np.float64)
    coords = coords[None] if coords.ndim == 2 else coords
    if binary is None:
        binary = (pred >= threshold).astype(np.int8)
        n = pred.shape[-1]
        binary[:, np.arange(n), np.arange(n)] = 0
    report = MetricsReport(
        accuracy=accuracy(pred, labels, threshold),
        variance=prediction_variance(pred),
        cc=cc_excluding_isolated(binary),
        isolated_pct=isolated_pct(binary),
        saturated_pct=saturated_pct(binary, k),
        link_validity_pct=link_validity(binary, coords, d),
        link_count_ratio=link_count_ratio(binary, labels),
    )
    breakdown = []
    for i in range(len(pred)):
        breakdown.append({
            "index": i,
            "accuracy": accuracy(pred[i], labels[i], threshold),
            "cc": cc_excluding_isolated(binary[i]),
            "isolated_pct": isolated_pct(binary[i]),
            "saturated_pct": saturated_pct(binary[i], k),
            "link_validity_pct": link_validity(binary[i], coords[i], d),
            "pred_edges": int(_upper(binary[i]).sum()),
            "label_edges": int(_upper(labels[i]).sum()),
        })
    return report, breakdown


def write_report(report: MetricsReport, breakdown, report_path, breakdown_path=None):
    with open(report_path, "w") as fh:
        fh.write(report.to_text())
    if breakdown_path is not None:
        with open(breakdown_path, "w") as fh:
            for row in breakdown:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def tune_threshold(pred_prob, label, grid=None) -> float:
    """Threshold maximising accuracy on a validation batch (ties keep the lowest)."""
    grid = np.round(np.arange(0.01, 1.0, 0.01), 2) if grid is None else np.asarray(grid)
    p, t = _upper(pred_prob).reshape(-1), _upper(label).reshape(-1) > 0
    scores = [((p >= g) == t).mean() for g in grid]
    best = max(scores)
    if ((p >= 0.5) == t).mean() >= best:
        return 0.5
    return float(grid[int(np.argmax(scores))])

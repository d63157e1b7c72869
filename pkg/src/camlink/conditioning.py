"""Graph-level conditioning: CAM tokens, FiLM modulation and baselines.

A CAM token is a single learnable vector per graph. Before every block it
reads the current node (and optionally edge) embeddings with single-head
cross-attention; after the block its value is mapped by affine FiLM heads
to a scale and shift applied to the block output. The comparison
conditioners (graph statistics, Laplacian eigenvalues) feed a fixed side
vector to the same FiLM heads; register tokens are extra attendable nodes
and use no FiLM at all.

Shapes are batched: node embeddings ``(B, n, D)``, edge embeddings
``(B, n, n, D)``, token ``(B, 1, D)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .nn import LayerNorm, Linear, Module, glorot, ones, param, zeros
from .solver import pairwise_distances

MODES = ("none", "cam", "cam2", "stats", "registers", "eigen", "cam_stats")
_ALIASES = {"cam+stats": "cam_stats"}


@dataclass
class ConditionerConfig:
    mode: str = "none"
    attend_edges: bool = True
    num_registers: int = 2
    num_eigen: int = 4
    d_p: int = 8
    # softmax inside the token cross-attention; False gives the raw
    # q.k/sqrt(d_k) weighting for ablation
    normalize_attention: bool = True

    def __post_init__(self):
        self.mode = _ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ConfigError(f"conditioner.mode must be one of {MODES}, got {self.mode!r}")
        if self.num_registers < 1 or self.num_eigen < 1 or self.d_p < 1:
            raise ConfigError("conditioner sizes must be positive")

    @property
    def uses_token(self):
        return self.mode in ("cam", "cam2", "cam_stats")

    @property
    def uses_stats(self):
        return self.mode in ("stats", "cam_stats")


# -- token readout and update ------------------------------------------------------
class CrossAttention(Module):
    """Single-head attention from one query token onto a set of vectors."""

    def __init__(self, rng, d_model, d_k):
        self.wq = glorot(rng, d_model, d_k)
        self.wk = glorot(rng, d_model, d_k)
        self.wv = glorot(rng, d_model, d_model)
        self.d_k = d_k

    def __call__(self, token, x, normalize=True):
        q = ad.matmul(token, self.wq)
        k = ad.matmul(x, self.wk)
        v = ad.matmul(x, self.wv)
        logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(self.d_k))
        weights = ad.softmax(logits) if normalize else logits
        return ad.matmul(weights, v)


class CamToken(Module):
    """Learnable initial value plus per-layer cross-attention updates."""

    def __init__(self, rng, d_model, d_k, layers, attend_edges=False):
        self.omega0 = param(rng.normal(0.0, 1.0, size=(d_model,)))
        self.d_model = d_model
        self.node_attn = [CrossAttention(rng, d_model, d_k) for _ in range(layers)]
        self.norms = [LayerNorm(d_model) for _ in range(layers)]
        self.attend_edges = attend_edges
        if attend_edges:
            self.edge_attn = [CrossAttention(rng, d_model, d_k) for _ in range(layers)]
            self.ffn = [Linear(rng, 2 * d_model, d_model) for _ in range(layers)]

    def init(self, batch: int) -> Tensor:
        return ad.broadcast_to(ad.reshape(self.omega0, (1, 1, self.d_model)), (batch, 1, self.d_model))


def cam_init(token: CamToken, batch: int = 1) -> Tensor:
    """Layer-0 token value: the learnable ``omega0`` broadcast over the batch."""
    return token.init(batch)


def cam_update(token: CamToken, layer: int, value, h, normalize=True) -> Tensor:
    """``LayerNorm(attend(token -> nodes) + token)``."""
    read = token.node_attn[layer](value, h, normalize)
    return token.norms[layer](ad.add(read, value))


def cam_update_fused(token: CamToken, layer: int, value, h, e, normalize=True) -> Tensor:
    """Node and edge readouts concatenated, one linear map, residual, LayerNorm."""
    b, n = e.shape[0], e.shape[1]
    flat = ad.reshape(e, (b, n * n, e.shape[-1]))
    read_nodes = token.node_attn[layer](value, h, normalize)
    read_edges = token.edge_attn[layer](value, flat, normalize)
    mixed = token.ffn[layer](ad.concat([read_nodes, read_edges], axis=-1))
    return token.norms[layer](ad.add(mixed, value))


# -- FiLM ------------------------------------------------------------------------
class FilmHead(Module):
    """Affine maps from a conditioning vector to (gamma, beta).

    Initialised to the identity modulation: zero weights, gamma bias 1,
    beta bias 0.
    """

    def __init__(self, d_in, d_model):
        self.w_gamma = zeros(d_in, d_model)
        self.b_gamma = ones(d_model)
        self.w_beta = zeros(d_in, d_model)
        self.b_beta = zeros(d_model)


def film_params(head: FilmHead, cond):
    gamma = ad.linear(cond, head.w_gamma, head.b_gamma)
    beta = ad.linear(cond, head.w_beta, head.b_beta)
    return gamma, beta


def film_apply(h, gamma, beta) -> Tensor:
    """``gamma * h + beta`` with broadcasting of shared parameters."""
    h, gamma, beta = ad.as_tensor(h), ad.as_tensor(gamma), ad.as_tensor(beta)
    try:
        out_shape = np.broadcast_shapes(h.shape, gamma.shape, beta.shape)
    except ValueError:
        raise DimensionError(f"film_apply: h {h.shape}, gamma {gamma.shape}, beta {beta.shape}") from None
    if out_shape != h.shape:
        raise DimensionError(f"film_apply: modulation {gamma.shape} would reshape h {h.shape}")
    return ad.add(ad.mul(gamma, h), beta)


class SecondOrder(Module):
    """Projections for per-element affinity with the token."""

    def __init__(self, rng, d_model, d_p):
        self.w_items = glorot(rng, d_model, d_p)
        self.w_cam = glorot(rng, d_model, d_p)


def affinity(so: SecondOrder, value, x) -> Tensor:
    """Scalar ``(W_items x_i) . (W_cam token)`` for each row of ``x``.

    ``x`` is ``(B, n, D)`` or ``(B, n, n, D)``; the result keeps a trailing
    axis of size 1.
    """
    q = ad.matmul(value, so.w_cam)  # (B, 1, d_p)
    proj = ad.matmul(x, so.w_items)
    if x.ndim == 4:
        q = ad.reshape(q, (q.shape[0], 1, 1, q.shape[-1]))
    return ad.tsum(ad.mul(proj, q), axis=-1, keepdims=True)


def second_order_params(so: SecondOrder, head: FilmHead, value, h, side=None):
    """Per-node (gamma_i, beta_i) from the affinity scalar a_i (plus side features)."""
    a = affinity(so, value, h)
    cond = a if side is None else ad.concat([a, _expand_side(side, a.shape[:-1])], axis=-1)
    return film_params(head, cond)


def _expand_side(side, lead_shape):
    side = ad.as_tensor(side)
    b, s = side.shape[0], side.shape[-1]
    shaped = ad.reshape(side, (b,) + (1,) * (len(lead_shape) - 1) + (s,))
    return ad.broadcast_to(shaped, tuple(lead_shape) + (s,))


# -- side features ---------------------------------------------------------------
STATS_DIM_BASE = 7


def stats_dim(with_density=False, with_time=False):
    return STATS_DIM_BASE + int(with_density) + int(with_time)


def stats_features(coords, d, current_edges=None, t_over_T=None, n_max=32) -> np.ndarray:
    """Fixed-order graph statistics of one instance.

    ``[n / n_max, mean dist, std dist, feasible pair fraction,
    mean / min / max feasible degree / (n - 1), (edge density), (t / T)]``.
    Distances are sorted before reduction so the vector does not depend on
    node order.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    iu = np.triu_indices(n, 1)
    dist = np.sort(pairwise_distances(coords)[iu])
    feasible = dist <= d
    if len(dist):
        mean_d, std_d, frac = dist.mean(), dist.std(), feasible.mean()
    else:
        mean_d = std_d = frac = 0.0
    adj = pairwise_distances(coords) <= d
    np.fill_diagonal(adj, False)
    deg = np.sort(adj.sum(1)) / max(n - 1, 1)
    out = [n / n_max, mean_d, std_d, frac, deg.mean(), deg.min(), deg.max()]
    if current_edges is not None:
        e = np.asarray(current_edges)
        out.append(float(e[iu].mean()) if len(iu[0]) else 0.0)
    if t_over_T is not None:
        out.append(float(t_over_T))
    return np.array(out, dtype=np.float64)


def laplacian_features(adjacency, p: int):
    """Smallest ``p`` eigenvalues of ``D - A`` and matching eigenvectors.

    Each eigenvector is sign-fixed so that its largest-magnitude entry is
    positive.
    """
    adj = np.asarray(adjacency, dtype=np.float64)
    n = len(adj)
    if not np.array_equal(adj, adj.T):
        raise ValueError("laplacian_features: adjacency must be symmetric")
    if p > n:
        raise ValueError(f"laplacian_features: p={p} exceeds n={n}")
    lap = np.diag(adj.sum(1)) - adj
    vals, vecs = np.linalg.eigh(lap)
    vals, vecs = vals[:p], vecs[:, :p]
    pick = np.abs(vecs).argmax(0)
    signs = np.sign(vecs[pick, np.arange(p)])
    signs[signs == 0] = 1.0
    return np.clip(vals, 0.0, None), vecs * signs


# -- registers -------------------------------------------------------------------
def register_tokens(h, registers) -> Tensor:
    """Append learnable register rows ``(r, D)`` after the ``n`` node rows."""
    b = h.shape[0]
    r, dim = registers.shape
    regs = ad.broadcast_to(ad.reshape(registers, (1, r, dim)), (b, r, dim))
    return ad.concat([h, regs], axis=-2)


def strip_registers(h, n: int) -> Tensor:
    return h[:, :n]


def pad_register_edges(e, edge_embedding, r: int) -> Tensor:
    """Grow ``(B, n, n, D)`` edges to ``(B, n+r, n+r, D)`` with a shared embedding."""
    b, n, _, dim = e.shape
    emb = ad.reshape(edge_embedding, (1, 1, 1, dim))
    cols = ad.broadcast_to(emb, (b, n, r, dim))
    e = ad.concat([e, cols], axis=2)
    rows = ad.broadcast_to(emb, (b, r, n + r, dim))
    return ad.concat([e, rows], axis=1)


# -- the conditioner wired into a model -------------------------------------------
class Conditioner(Module):
    """Per-layer token updates and FiLM heads for one model.

    ``side_dim`` is the width of the constant side vector (statistics,
    eigenvalues and/or diffusion time); ``edges`` enables edge attendance
    and independent edge modulation.
    """

    def __init__(self, cfg: ConditionerConfig, rng, d_model, d_k, layers, side_dim=0, edges=False):
        self.cfg = cfg
        self.layers = layers
        self.edges = edges
        self.side_dim = side_dim
        self.token = None
        self.registers = None
        self.register_edge = None
        mode = cfg.mode
        if mode == "registers":
            self.registers = param(rng.normal(0.0, 1.0, size=(cfg.num_registers, d_model)))
            if edges:
                self.register_edge = param(rng.normal(0.0, 1.0, size=(d_model,)))
        if cfg.uses_token:
            self.token = CamToken(rng, d_model, d_k, layers, attend_edges=edges and cfg.attend_edges)
        if mode == "cam2":
            self.node_so = [SecondOrder(rng, d_model, cfg.d_p) for _ in range(layers)]
            film_in = 1 + side_dim
            if edges:
                self.edge_so = [SecondOrder(rng, d_model, cfg.d_p) for _ in range(layers)]
        else:
            film_in = (d_model if cfg.uses_token else 0) + side_dim
        self.film_in = film_in
        self.node_film = [FilmHead(film_in, d_model) for _ in range(layers)] if film_in else []
        self.edge_film = [FilmHead(film_in, d_model) for _ in range(layers)] if film_in and edges else []

    @property
    def num_registers(self):
        return self.cfg.num_registers if self.registers is not None else 0

    def start(self, batch):
        return cam_init(self.token, batch) if self.token is not None else None

    def update(self, layer, value, h, e=None):
        if self.token is None:
            return None
        norm = self.cfg.normalize_attention
        if self.token.attend_edges and e is not None:
            return cam_update_fused(self.token, layer, value, h, e, norm)
        return cam_update(self.token, layer, value, h, norm)

    def _cond_vector(self, value, side):
        parts = []
        if self.token is not None:
            parts.append(value)
        if side is not None:
            parts.append(side)
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    def modulate(self, layer, value, h, e=None, side=None):
        if not self.node_film:
            return h, e
        if self.cfg.mode == "cam2":
            gamma, beta = second_order_params(self.node_so[layer], self.node_film[layer], value, h, side)
            h = film_apply(h, gamma, beta)
            if e is not None and self.edge_film:
                gamma, beta = second_order_params(self.edge_so[layer], self.edge_film[layer], value, e, side)
                e = film_apply(e, gamma, beta)
            return h, e
        cond = self._cond_vector(value, side)  # (B, 1, F)
        gamma, beta = film_params(self.node_film[layer], cond)
        h = film_apply(h, gamma, beta)
        if e is not None and self.edge_film:
            gamma, beta = film_params(self.edge_film[layer], cond)
            b = gamma.shape[0]
            shape = (b, 1, 1, gamma.shape[-1])
            e = film_apply(e, ad.reshape(gamma, shape), ad.reshape(beta, shape))
        return h, e

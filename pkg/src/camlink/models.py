"""Permutation-equivariant link predictors and the node-conditioned VAE.

Two families share one input pipeline:

* ``attention_score``: a few attention blocks; the last layer's softmax
  attention scores, averaged over heads, are the link predictions.
* ``graph_transformer``: node and edge streams, edge embeddings gating the
  attention logits per head, per-edge sigmoid readout.

Either family takes a :class:`~camlink.conditioning.Conditioner`. Token
updates read each block's input; FiLM modulation is applied to the block
output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conditioning import (
    ConditionerConfig,
    Conditioner,
    laplacian_features,
    pad_register_edges,
    register_tokens,
    stats_dim,
    stats_features,
    strip_registers,
)
from .errors import ConfigError
from .nn import FeedForward, LayerNorm, Linear, Module, glorot, param
from .solver import pairwise_distances

FAMILIES = ("attention_score", "graph_transformer")


@dataclass
class ModelConfig:
    family: str = "attention_score"
    layers: int | None = None
    heads: int = 4
    d_model: int = 32
    d_k: int = 8
    conditioner: ConditionerConfig = field(default_factory=ConditionerConfig)
    long_residuals: bool = True
    ffn: bool = True
    laplacian_pe: bool = False
    pe_dim: int = 4
    unnormalized_scores: bool = False
    # extra per-node / per-edge input channels supplied by the caller
    node_extra_dim: int = 0
    edge_extra_dim: int = 0
    time_input: bool = False
    density_input: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.conditioner, dict):
            self.conditioner = ConditionerConfig(**self.conditioner)
        if self.family not in FAMILIES:
            raise ConfigError(f"model.family must be one of {FAMILIES}, got {self.family!r}")
        if self.layers is None:
            self.layers = 2 if self.family == "attention_score" else 6
        if self.layers < 1:
            raise ConfigError("model.layers must be >= 1")
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by heads={self.heads}")

    @property
    def num_blocks(self):
        # the attention-score family spends its last layer on the score head
        return self.layers - 1 if self.family == "attention_score" else self.layers


@dataclass
class Features:
    """Constant model inputs for a batch of same-size graphs."""

    coords: np.ndarray  # (B, n, 2)
    d: float
    k: int
    node_extra: object = None  # (B, n, a) array or Tensor
    edge_extra: object = None  # (B, n, n, b) array
    t_frac: np.ndarray | None = None  # (B,)
    density_source: np.ndarray | None = None  # (B, n, n) graph for the density statistic

    @property
    def batch(self):
        return self.coords.shape[0]

    @property
    def n(self):
        return self.coords.shape[1]


def make_features(coords, d, k, **kw) -> Features:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 2:
        coords = coords[None]
    return Features(coords, float(d), int(k), **kw)


def symmetrize(p) -> Tensor:
    """``(P + P^T) / 2`` with the diagonal zeroed."""
    n = p.shape[-1]
    off = 1.0 - np.eye(n)
    return ad.mul(ad.scale(ad.add(p, ad.transpose(p)), 0.5), off)


def _split_heads(x, heads):
    b, n, width = x.shape
    return ad.transpose(ad.reshape(x, (b, n, heads, width // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, heads, n, dk = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, heads * dk))


class MultiHeadAttention(Module):
    def __init__(self, rng, d_model, heads, d_k, values=True):
        self.wq = glorot(rng, d_model, heads * d_k)
        self.wk = glorot(rng, d_model, heads * d_k)
        if values:
            self.wv = glorot(rng, d_model, heads * d_k)
            self.wo = glorot(rng, heads * d_k, d_model)
        self.heads, self.d_k = heads, d_k

    def logits(self, h):
        q = _split_heads(ad.matmul(h, self.wq), self.heads)
        k = _split_heads(ad.matmul(h, self.wk), self.heads)
        return ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(self.d_k))

    def __call__(self, h, gate=None):
        logits = self.logits(h)
        if gate is not None:
            logits = ad.mul(logits, gate)
        v = _split_heads(ad.matmul(h, self.wv), self.heads)
        out = _merge_heads(ad.matmul(ad.softmax(logits), v))
        return ad.matmul(out, self.wo), logits


def attention_layer(mha: MultiHeadAttention, h) -> Tensor:
    """``Concat_i(softmax(Q_i K_i^T / sqrt(d_k)) V_i) W^O``."""
    return mha(h)[0]


def attention_scores(mha: MultiHeadAttention, h, normalized=True) -> Tensor:
    """Head-averaged attention score matrix ``(B, n, n)`` (rows sum to 1)."""
    logits = mha.logits(h)
    scores = ad.softmax(logits) if normalized else ad.sigmoid(logits)
    return ad.mean(scores, axis=1)


class AttentionBlock(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.attn = MultiHeadAttention(rng, cfg.d_model, cfg.heads, cfg.d_k)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(rng, cfg.d_model, 2 * cfg.d_model) if cfg.ffn else None
        self.norm2 = LayerNorm(cfg.d_model) if cfg.ffn else None

    def __call__(self, h):
        h = self.norm1(ad.add(h, attention_layer(self.attn, h)))
        if self.ffn is not None:
            h = self.norm2(ad.add(h, self.ffn(h)))
        return h


class GTBlock(Module):
    """Graph Transformer block.

    Per head, an edge projection ``s_i(E)`` (bias initialised to 1)
    multiplies the scaled dot-product logits. Nodes get the softmax-weighted
    values; edges get the gated logits lifted back to ``d_model``.
    """

    def __init__(self, rng, cfg: ModelConfig):
        d, m = cfg.d_model, cfg.heads
        self.attn = MultiHeadAttention(rng, d, m, cfg.d_k)
        self.we = glorot(rng, d, m)
        self.be = param(np.ones(m))
        self.wo_e = glorot(rng, m, d)
        self.norm_h1, self.norm_e1 = LayerNorm(d), LayerNorm(d)
        if cfg.ffn:
            self.ffn_h, self.ffn_e = FeedForward(rng, d, 2 * d), FeedForward(rng, d, 2 * d)
            self.norm_h2, self.norm_e2 = LayerNorm(d), LayerNorm(d)
        else:
            self.ffn_h = self.ffn_e = None

    def edge_gate(self, e):
        return ad.transpose(ad.linear(e, self.we, self.be), (0, 3, 1, 2))

    def __call__(self, h, e, h0=None):
        node_out, logits = self.attn(h, self.edge_gate(e))
        edge_out = ad.matmul(ad.transpose(logits, (0, 2, 3, 1)), self.wo_e)
        h_res = ad.add(h, node_out)
        if h0 is not None:
            h_res = ad.add(h_res, h0)
        h = self.norm_h1(h_res)
        e = self.norm_e1(ad.add(e, edge_out))
        if self.ffn_h is not None:
            h = self.norm_h2(ad.add(h, self.ffn_h(h)))
            e = self.norm_e2(ad.add(e, self.ffn_e(e)))
        return h, e


def graph_transformer_layer(block: GTBlock, h, e, h0=None):
    return block(h, e, h0)


class LinkPredictor(Module):
    """One model of either family plus its conditioner."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0])
        # conditioner weights come from their own stream so the backbone
        # initialises identically with and without conditioning
        cond_rng = np.random.default_rng([cfg.seed, 1])
        d = cfg.d_model
        node_in = 2 + (cfg.pe_dim if cfg.laplacian_pe else 0) + cfg.node_extra_dim
        self.node_lift = Linear(rng, node_in, d)
        gt = cfg.family == "graph_transformer"
        if gt:
            self.edge_lift = Linear(rng, 2 + cfg.edge_extra_dim, d)
            self.blocks = [GTBlock(rng, cfg) for _ in range(cfg.num_blocks)]
            self.readout = Linear(rng, d, 1)
        else:
            self.blocks = [AttentionBlock(rng, cfg) for _ in range(cfg.num_blocks)]
            self.score = MultiHeadAttention(rng, d, cfg.heads, cfg.d_k, values=False)
        self.side_dim = self._side_dim()
        self.conditioner = Conditioner(cfg.conditioner, cond_rng, d, cfg.d_k, max(cfg.num_blocks, 1),
                                       side_dim=self.side_dim, edges=gt)

    def _side_dim(self):
        cfg = self.cfg
        mode = cfg.conditioner.mode
        if mode in ("stats", "cam_stats"):
            return stats_dim(cfg.density_input, cfg.time_input)
        if mode == "eigen":
            return cfg.conditioner.num_eigen + int(cfg.time_input)
        return int(cfg.time_input)

    # -- inputs ------------------------------------------------------------
    def side_features(self, f: Features):
        cfg = self.cfg
        mode = cfg.conditioner.mode
        if not self.side_dim:
            return None
        rows = []
        for b in range(f.batch):
            t = None if f.t_frac is None else float(f.t_frac[b])
            if mode in ("stats", "cam_stats"):
                dens = None if f.density_source is None else f.density_source[b]
                rows.append(stats_features(f.coords[b], f.d, dens if cfg.density_input else None,
                                           t if cfg.time_input else None))
            else:
                row = []
                if mode == "eigen":
                    graph = f.density_source[b] if f.density_source is not None else _feasible(f.coords[b], f.d)
                    row.extend(laplacian_features(graph, cfg.conditioner.num_eigen)[0])
                if cfg.time_input:
                    row.append(t)
                rows.append(np.array(row, dtype=np.float64))
        return Tensor(np.stack(rows)[:, None, :])

    def node_inputs(self, f: Features):
        parts = [Tensor(f.coords)]
        if self.cfg.laplacian_pe:
            pe = [laplacian_features(_feasible(c, f.d), self.cfg.pe_dim)[1] for c in f.coords]
            parts.append(Tensor(np.stack(pe)))
        if self.cfg.node_extra_dim:
            parts.append(ad.as_tensor(f.node_extra))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    def edge_inputs(self, f: Features):
        dist = np.stack([pairwise_distances(c) for c in f.coords])
        feas = (dist <= f.d).astype(np.float64)
        feas[:, np.arange(f.n), np.arange(f.n)] = 0.0
        parts = [dist[..., None], feas[..., None]]
        if self.cfg.edge_extra_dim:
            parts.append(np.asarray(f.edge_extra, dtype=np.float64).reshape(dist.shape + (-1,)))
        return Tensor(np.concatenate(parts, axis=-1))

    # -- forward -----------------------------------------------------------
    def encode(self, f: Features):
        """Run the block stack; returns node (and edge) embeddings, registers stripped."""
        cond = self.conditioner
        side = self.side_features(f)
        h = self.node_lift(self.node_inputs(f))
        e = self.edge_lift(self.edge_inputs(f)) if self.cfg.family == "graph_transformer" else None
        n, r = f.n, cond.num_registers
        if r:
            h = register_tokens(h, cond.registers)
            if e is not None:
                e = pad_register_edges(e, cond.register_edge, r)
        h0 = h if (e is not None and self.cfg.long_residuals) else None
        value = cond.start(f.batch)
        for layer, block in enumerate(self.blocks):
            value = cond.update(layer, value, h, e)
            if e is None:
                h = block(h)
            else:
                h, e = block(h, e, h0)
            h, e = cond.modulate(layer, value, h, e, side)
        if r:
            h = strip_registers(h, n)
            if e is not None:
                e = e[:, :n, :n]
        return h, e

    def raw_scores(self, f: Features):
        """Pre-symmetrisation predictions ``(B, n, n)``."""
        h, e = self.encode(f)
        if e is None:
            return attention_scores(self.score, h, not self.cfg.unnormalized_scores)
        return gt_edge_readout(self.readout, e, symmetric=False)

    def __call__(self, f: Features) -> Tensor:
        """Symmetric link probabilities with zero diagonal, ``(B, n, n)``."""
        return symmetrize(self.raw_scores(f))


def attention_score_head(model: LinkPredictor, h_last) -> Tensor:
    return symmetrize(attention_scores(model.score, h_last, not model.cfg.unnormalized_scores))


def gt_edge_readout(readout: Linear, e_last, symmetric=True) -> Tensor:
    """Per-edge affine logit, sigmoid, then (optionally) symmetrise."""
    logit = readout(e_last)
    p = ad.sigmoid(ad.reshape(logit, logit.shape[:-1]))
    return symmetrize(p) if symmetric else p


def _feasible(coords, d):
    adj = (pairwise_distances(coords) <= d).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return adj


# -- VAE ----------------------------------------------------------------------------
class GraphVAE(Module):
    """Graph Transformer encoder with mean pooling; decoder of any family.

    The decoder sees the latent ``z`` concatenated to every node's input.
    """

    def __init__(self, decoder_cfg: ModelConfig, latent_dim=8, encoder_layers=2):
        self.latent_dim = latent_dim
        enc_cfg = ModelConfig(family="graph_transformer", layers=encoder_layers, heads=decoder_cfg.heads,
                              d_model=decoder_cfg.d_model, d_k=decoder_cfg.d_k, edge_extra_dim=1,
                              seed=decoder_cfg.seed + 7919)
        self.encoder = LinkPredictor(enc_cfg)
        rng = np.random.default_rng([decoder_cfg.seed, 2])
        self.mu_head = Linear(rng, decoder_cfg.d_model, latent_dim)
        self.logvar_head = Linear(rng, decoder_cfg.d_model, latent_dim)
        decoder_cfg = replace(decoder_cfg, node_extra_dim=latent_dim)
        self.decoder = LinkPredictor(decoder_cfg)
        self.cfg = decoder_cfg

    def encode(self, coords, label, d, k):
        f = make_features(coords, d, k, edge_extra=np.asarray(label, dtype=np.float64)[..., None])
        h, _ = self.encoder.encode(f)
        pooled = ad.mean(h, axis=1)
        return self.mu_head(pooled), self.logvar_head(pooled)

    def decode(self, coords, z, d, k) -> Tensor:
        coords = np.asarray(coords, dtype=np.float64)
        if coords.ndim == 2:
            coords = coords[None]
        b, n = coords.shape[:2]
        z = ad.as_tensor(z)
        zn = ad.broadcast_to(ad.reshape(z, (b, 1, self.latent_dim)), (b, n, self.latent_dim))
        return self.decoder(make_features(coords, d, k, node_extra=zn))


def vae_encode(vae: GraphVAE, coords, label, d, k):
    return vae.encode(coords, label, d, k)


def vae_loss(vae: GraphVAE, coords, label, d, k, rng, eps=None):
    """Negative ELBO per graph: summed pair BCE plus closed-form KL, batch-averaged."""
    mu, log_var = vae.encode(coords, label, d, k)
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    z = ad.add(mu, ad.mul(ad.exp(ad.scale(log_var, 0.5)), eps))
    probs = vae.decode(coords, z, d, k)
    label = np.asarray(label, dtype=np.float64)
    b, n = label.shape[:2]
    mask = np.broadcast_to(np.triu(np.ones((n, n)), 1), label.shape)
    recon = ad.scale(ad.bce_loss(probs, label, mask=mask, reduction="sum"), 1.0 / b)
    kl = ad.mean(ad.kl_standard_normal(mu, log_var))
    return ad.add(recon, kl)


def vae_sample(vae: GraphVAE, coords, d, k, rng, z=None) -> Tensor:
    """Decode with ``z ~ N(0, I)`` (or the given ``z``)."""
    coords = np.asarray(coords, dtype=np.float64)
    b = 1 if coords.ndim == 2 else coords.shape[0]
    if z is None:
        z = rng.standard_normal((b, vae.latent_dim))
    with ad.no_grad():
        return vae.decode(coords, z, d, k)

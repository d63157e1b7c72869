"""Edge-only discrete diffusion with a scalar stationary edge rate.

States per node pair are absent (0) / present (1). With ``pi = [1 - m, m]``
the cumulative kernel is ``Qbar_t = abar_t I + (1 - abar_t) 1 pi^T`` and the
one-step kernel ``Q_t = a_t I + (1 - a_t) 1 pi^T`` with
``a_t = abar_t / abar_{t-1}``. Because ``pi^T 1 = 1`` these compose:
``Qbar_{t-1} Q_t = Qbar_t``.

Nodes are never noised. Only the strict upper triangle is sampled; the
lower triangle mirrors it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError
from .models import LinkPredictor, ModelConfig, make_features


@dataclass
class DiffusionSchedule:
    T: int
    s: float
    m: float
    alpha_bar: np.ndarray

    @property
    def beta_bar(self):
        return 1.0 - self.alpha_bar

    def step_alpha(self, t):
        return self.alpha_bar[t] / self.alpha_bar[t - 1]


def build_schedule(T=200, s=0.008, m=0.1) -> DiffusionSchedule:
    """Tabulate ``abar_t = cos(0.5 pi (t/T + s) / (1 + s))^2`` for ``t = 0..T``."""
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not 0.0 < m < 1.0:
        raise ConfigError(f"edge marginal m must lie in (0, 1), got {m}")
    if not s > 0.0:
        raise ConfigError(f"offset s must be positive, got {s}")
    t = np.arange(T + 1, dtype=np.float64)
    alpha_bar = np.cos(0.5 * np.pi * (t / T + s) / (1.0 + s)) ** 2
    return DiffusionSchedule(int(T), float(s), float(m), alpha_bar)


def _pi(m):
    return np.array([1.0 - m, m])


def q_bar(schedule: DiffusionSchedule, t: int) -> np.ndarray:
    """Cumulative 2x2 transition matrix, rows indexed by the clean state."""
    a = schedule.alpha_bar[t]
    return a * np.eye(2) + (1.0 - a) * np.tile(_pi(schedule.m), (2, 1))


def q_step(schedule: DiffusionSchedule, t: int) -> np.ndarray:
    """One-step 2x2 kernel from ``t - 1`` to ``t``."""
    a = schedule.step_alpha(t)
    return a * np.eye(2) + (1.0 - a) * np.tile(_pi(schedule.m), (2, 1))


def upper_mask(n):
    return np.triu(np.ones((n, n), dtype=bool), 1)


def _mirror(upper_bits):
    out = np.triu(upper_bits, 1)
    return out | np.swapaxes(out, -1, -2)


def symmetric_uniform(rng, shape):
    """Uniforms with ``U[..., i, j] == U[..., j, i]`` drawn from the upper triangle."""
    u = rng.random(shape)
    up = np.triu(u, 1)
    return up + np.swapaxes(up, -1, -2)


def forward_noise(label, schedule: DiffusionSchedule, t, rng, uniforms=None) -> np.ndarray:
    """Sample ``e_t ~ Cat(Qbar_t[e_0])`` independently per pair; symmetric, zero diagonal."""
    label = np.asarray(label).astype(np.int8)
    t = np.broadcast_to(np.asarray(t), label.shape[:-2])
    abar = schedule.alpha_bar[t][..., None, None]
    p_one = abar * label + (1.0 - abar) * schedule.m
    u = symmetric_uniform(rng, label.shape) if uniforms is None else uniforms
    e = (u < p_one).astype(np.int8)
    return _mirror(e)


def posterior(e_t, e0, schedule: DiffusionSchedule, t):
    """``q(e_{t-1} = 1 | e_0, e_t)`` (elementwise, arrays broadcast).

    Proportional to ``Q_t[e_{t-1}, e_t] * Qbar_{t-1}[e_0, e_{t-1}]``.
    """
    if np.any(np.asarray(t) < 1):
        raise ValueError("posterior needs t >= 1")
    e_t = np.asarray(e_t)
    e0 = np.asarray(e0)
    t = np.asarray(t)
    m = schedule.m
    a = schedule.alpha_bar[t] / schedule.alpha_bar[t - 1]
    abar_prev = schedule.alpha_bar[t - 1]
    pi_et = np.where(e_t == 1, m, 1.0 - m)
    # Q_t[v, e_t] for v = 0, 1
    step0 = a * (e_t == 0) + (1.0 - a) * pi_et
    step1 = a * (e_t == 1) + (1.0 - a) * pi_et
    # Qbar_{t-1}[e0, v]
    cum0 = abar_prev * (e0 == 0) + (1.0 - abar_prev) * (1.0 - m)
    cum1 = abar_prev * (e0 == 1) + (1.0 - abar_prev) * m
    w0, w1 = step0 * cum0, step1 * cum1
    z = w0 + w1
    if np.any(z <= 0):
        raise NumericError("posterior normaliser vanished")
    return w1 / z


def posterior_dist(e_t, e0, schedule, t):
    """Both probabilities ``[P(e_{t-1}=0), P(e_{t-1}=1)]`` for scalar inputs."""
    p1 = float(posterior(e_t, e0, schedule, t))
    return np.array([1.0 - p1, p1])


class DiffusionDenoiser:
    """Graph Transformer mapping ``(coords, e_t, t/T)`` to ``P(e_0 = 1)`` per pair."""

    def __init__(self, cfg: ModelConfig):
        if cfg.family != "graph_transformer":
            raise ConfigError("the denoiser must be a graph_transformer")
        cfg = replace(cfg, edge_extra_dim=1, time_input=True, density_input=True)
        self.cfg = cfg
        self.net = LinkPredictor(cfg)

    def parameters(self):
        return self.net.parameters()

    def state_dict(self):
        return self.net.state_dict()

    def load_state_dict(self, state):
        self.net.load_state_dict(state)

    def predict_x0(self, coords, e_t, t_frac, d, k):
        e_t = np.asarray(e_t, dtype=np.float64)
        f = make_features(coords, d, k, edge_extra=e_t[..., None], t_frac=np.asarray(t_frac, np.float64),
                          density_source=e_t)
        return self.net(f)


def diffusion_train_step(coords, labels, model, schedule: DiffusionSchedule, rng, d, k):
    """Noise a batch at uniform ``t in [1, T]`` and return the CE to the clean edges."""
    labels = np.asarray(labels)
    b, n = labels.shape[:2]
    t = rng.integers(1, schedule.T + 1, size=b)
    e_t = forward_noise(labels, schedule, t, rng)
    probs = model.predict_x0(coords, e_t, t / schedule.T, d, k)
    mask = np.broadcast_to(upper_mask(n), labels.shape)
    return ad.bce_loss(probs, labels, mask=mask)


def sample_reverse(coords, model, schedule: DiffusionSchedule, rngs, d, k, final="threshold", uniforms=None):
    """Ancestral sampling from ``e_T ~ Bernoulli(m)`` down to ``e_0``.

    ``rngs`` holds one generator per instance so results do not depend on
    batching. At every step ``P(e_{t-1} = 1) = sum_{e0} q(1 | e0, e_t)
    p_model(e0)``. At ``t = 1`` the result is thresholded at 0.5 unless
    ``final == "sample"``. ``uniforms(t) -> (B, n, n)`` overrides the noise
    source (symmetric arrays expected); used to test permutation
    consistency.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 2:
        coords = coords[None]
    b, n = coords.shape[:2]

    def draw(step):
        if uniforms is not None:
            return uniforms(step)
        return np.stack([symmetric_uniform(r, (n, n)) for r in rngs])

    e = _mirror((draw(schedule.T + 1) < schedule.m).astype(np.int8))
    with ad.no_grad():
        for t in range(schedule.T, 0, -1):
            p0 = model.predict_x0(coords, e, np.full(b, t / schedule.T), d, k).data
            p_prev = posterior(e, 1, schedule, t) * p0 + posterior(e, 0, schedule, t) * (1.0 - p0)
            if t == 1 and final == "threshold":
                e = _mirror((p_prev >= 0.5).astype(np.int8))
            else:
                e = _mirror((draw(t) < p_prev).astype(np.int8))
    return e

"""Mini-batch AdamW training for one-shot, VAE and diffusion link models.

Randomness per epoch comes from ``default_rng([seed, 2, epoch])`` and the
optimiser state is checkpointed after every epoch, so an interrupted run
resumed from its checkpoint follows the same trajectory as an
uninterrupted one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .conditioning import ConditionerConfig
from .diffusion import DiffusionDenoiser, build_schedule, diffusion_train_step, forward_noise, sample_reverse
from .errors import ConfigError
from .metrics import accuracy, prediction_variance, tune_threshold
from .models import GraphVAE, LinkPredictor, ModelConfig, make_features, vae_loss
from .nn import AdamW, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

TASKS = ("supervised", "vae", "diffusion")


@dataclass
class TrainConfig:
    task: str = "supervised"
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    seed: int = 0
    # hinge penalty on predictions within `repulsive_margin` of the edge rate
    mean_repulsive: float = 0.0
    repulsive_margin: float = 0.1
    latent_dim: int = 8
    T: int = 200
    s: float = 0.008

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"train.task must be one of {TASKS}, got {self.task!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("train.epochs must be >= 0 and train.batch_size >= 1")


def stack(instances):
    """Stack same-size instances into ``coords (B,n,2)``, ``labels (B,n,n)``, ``d``, ``k``."""
    if not instances:
        raise ValueError("empty instance list")
    n, d, k = instances[0].n, instances[0].d, instances[0].k
    for inst in instances:
        if (inst.n, inst.d, inst.k) != (n, d, k):
            raise ValueError("instances must share n, d and k")
    coords = np.stack([inst.coords for inst in instances])
    labels = np.stack([inst.label for inst in instances]).astype(np.float64)
    return coords, labels, d, k


def edge_rate(labels):
    n = labels.shape[-1]
    iu = np.triu_indices(n, 1)
    return float(labels[:, iu[0], iu[1]].mean())


class Bundle:
    """A trainable model plus whatever the task needs to use it."""

    def __init__(self, task, model_cfg: ModelConfig, train_cfg: TrainConfig, m):
        self.task, self.model_cfg, self.train_cfg, self.m = task, model_cfg, train_cfg, m
        self.threshold = 0.5
        if task == "supervised":
            self.model = LinkPredictor(model_cfg)
        elif task == "vae":
            self.model = GraphVAE(model_cfg, latent_dim=train_cfg.latent_dim)
        else:
            self.model = DiffusionDenoiser(model_cfg)
            self.schedule = build_schedule(train_cfg.T, train_cfg.s, m)

    def parameters(self):
        return self.model.parameters()

    def loss(self, coords, labels, d, k, rng):
        n = labels.shape[-1]
        if self.task == "supervised":
            probs = self.model(make_features(coords, d, k))
            mask = np.broadcast_to(np.triu(np.ones((n, n)), 1), labels.shape)
            loss = ad.bce_loss(probs, labels, mask=mask)
            cfg = self.train_cfg
            if cfg.mean_repulsive > 0:
                gap = ad.relu(ad.sub(probs, self.m)) + ad.relu(ad.sub(self.m, probs))
                hinge = ad.relu(ad.sub(cfg.repulsive_margin, gap))
                penalty = ad.scale(ad.tsum(ad.mul(hinge, mask)), 1.0 / mask.sum())
                loss = ad.add(loss, ad.scale(penalty, cfg.mean_repulsive))
            return loss
        if self.task == "vae":
            return vae_loss(self.model, coords, labels, d, k, rng)
        return diffusion_train_step(coords, labels, self.model, self.schedule, rng, d, k)

    def predict(self, coords, d, k, rng=None, labels=None):
        """Probabilities used for logging and threshold tuning."""
        with ad.no_grad():
            if self.task == "supervised":
                return self.model(make_features(coords, d, k)).data
            if self.task == "vae":
                z = np.zeros((len(coords), self.model.latent_dim))
                return self.model.decode(coords, z, d, k).data
            t = rng.integers(1, self.schedule.T + 1, size=len(coords))
            e_t = forward_noise(labels, self.schedule, t, rng)
            return self.model.predict_x0(coords, e_t, t / self.schedule.T, d, k).data

    def sample(self, coords, d, k, seeds, final="threshold"):
        """Binary link sets: thresholded one-shot, VAE draw, or reverse diffusion."""
        rngs = [np.random.default_rng(s) for s in seeds]
        with ad.no_grad():
            if self.task == "supervised":
                probs = self.model(make_features(coords, d, k)).data
                return (probs >= self.threshold).astype(np.int8) * (1 - np.eye(coords.shape[1], dtype=np.int8)), probs
            if self.task == "vae":
                z = np.stack([r.standard_normal(self.model.latent_dim) for r in rngs])
                probs = self.model.decode(coords, z, d, k).data
                return (probs >= self.threshold).astype(np.int8) * (1 - np.eye(coords.shape[1], dtype=np.int8)), probs
        e = sample_reverse(coords, self.model, self.schedule, rngs, d, k, final=final)
        return e, e.astype(np.float64)

    # -- persistence -------------------------------------------------------
    def meta(self):
        cfg = asdict(self.model_cfg)
        return {"task": self.task, "model": cfg, "train": asdict(self.train_cfg), "m": self.m,
                "threshold": self.threshold}

    @classmethod
    def from_meta(cls, meta):
        model_cfg = model_config_from_dict(meta["model"])
        train_cfg = TrainConfig(**meta["train"])
        bundle = cls(meta["task"], model_cfg, train_cfg, meta["m"])
        bundle.threshold = meta.get("threshold", 0.5)
        return bundle


def model_config_from_dict(d):
    d = dict(d)
    d["conditioner"] = ConditionerConfig(**d.get("conditioner", {}))
    return ModelConfig(**d)


@dataclass
class TrainResult:
    bundle: Bundle
    log: list = field(default_factory=list)


def save_bundle(path, bundle: Bundle, opt: AdamW | None = None, extra=None):
    arrays = {f"param.{k}": v for k, v in bundle.model.state_dict().items()}
    meta = bundle.meta()
    if opt is not None:
        arrays.update({f"opt.{k}": v for k, v in opt.state_arrays().items()})
        meta["opt_step"] = opt.state["step"]
    meta.update(extra or {})
    save_checkpoint(path, arrays, meta)


def load_bundle(path):
    arrays, meta = load_checkpoint(path)
    bundle = Bundle.from_meta(meta)
    bundle.model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param.")})
    opt_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("opt.")}
    return bundle, meta, opt_arrays


def train(instances, model_cfg: ModelConfig, train_cfg: TrainConfig, val=None,
          checkpoint_path=None, log_path=None, resume=False, n_expected=None) -> TrainResult:
    """Train on ``instances``; checkpoint and log after every epoch."""
    coords, labels, d, k = stack(instances)
    if n_expected is not None and coords.shape[1] != n_expected:
        raise ValueError(f"dataset has n={coords.shape[1]} but the config expects n={n_expected}")
    m = edge_rate(labels)
    bundle = Bundle(train_cfg.task, model_cfg, train_cfg, m)
    opt = AdamW(bundle.parameters(), lr=train_cfg.lr, betas=(train_cfg.beta1, train_cfg.beta2),
                weight_decay=train_cfg.weight_decay)
    history, start = [], 0
    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        old, meta, opt_arrays = load_bundle(checkpoint_path)
        bundle.model.load_state_dict(old.model.state_dict())
        bundle.m = meta["m"]
        if bundle.task == "diffusion":
            bundle.schedule = old.schedule
        opt.load_state_arrays(opt_arrays, meta.get("opt_step", 0))
        history = meta.get("log", [])
        start = meta.get("epochs_done", 0)
        log.info("resuming from epoch %d", start)

    eval_coords, eval_labels = (coords, labels) if val is None else stack(val)[:2]
    for epoch in range(start, train_cfg.epochs):
        rng = np.random.default_rng([train_cfg.seed, 2, epoch])
        order = rng.permutation(len(coords))
        losses, weights = [], []
        for lo in range(0, len(order), train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            opt.zero_grad()
            loss = bundle.loss(coords[idx], labels[idx], d, k, rng)
            loss.backward()
            for p in opt.params.values():
                # parameters off the loss path (e.g. the last block's node stream
                # under an edge readout) have an exact zero gradient
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            opt.step()
            losses.append(loss.item())
            weights.append(len(idx))
        probs = bundle.predict(eval_coords, d, k, np.random.default_rng([train_cfg.seed, 3, epoch]), eval_labels)
        record = {
            "epoch": epoch,
            "loss": float(np.average(losses, weights=weights)),
            "accuracy": accuracy(probs, eval_labels, 0.5),
            "variance": prediction_variance(probs),
        }
        history.append(record)
        log.info("epoch %d loss %.5f acc %.4f var %.4f", epoch, record["loss"], record["accuracy"],
                 record["variance"])
        if checkpoint_path is not None:
            save_bundle(checkpoint_path, bundle, opt, {"epochs_done": epoch + 1, "log": history,
                                                       "d": d, "k": k, "n": int(coords.shape[1])})
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    if val is not None and bundle.task != "diffusion":
        probs = bundle.predict(eval_coords, d, k)
        bundle.threshold = tune_threshold(probs, eval_labels)
    if checkpoint_path is not None:
        save_bundle(checkpoint_path, bundle, opt, {"epochs_done": max(train_cfg.epochs, start), "log": history,
                                                   "d": d, "k": k, "n": int(coords.shape[1])})
    return TrainResult(bundle, history)

"""Command-line entry point: ``camlink generate|train|sample|eval``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 capacity error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from .conditioning import ConditionerConfig
from .dataset import Instance, generate_dataset, load_manifest, load_records, write_records
from .errors import CapacityError, ConfigError
from .metrics import evaluate, write_report
from .models import ModelConfig
from .training import TrainConfig, load_bundle, stack, train

log = logging.getLogger("camlink")

EXIT_CONFIG, EXIT_IO, EXIT_CAPACITY = 2, 3, 4
SPLITS = ("train", "val", "test")


def split_sizes(count, ratios):
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"data.split must be three non-negative ratios summing to 1, got {ratios}")
    val, test = round(count * ratios[1]), round(count * ratios[2])
    return count - val - test, val, test


def cmd_generate(cfg, provided, args):
    data = cfg["data"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifests = {}
    for stream, (name, size) in enumerate(zip(SPLITS, split_sizes(data["count"], data["split"]))):
        manifests[name] = generate_dataset(size, data["n"], data["k"], data["d"], cfg["seed"],
                                           out / f"{name}.jsonl", stream=stream, workers=cfg["workers"])
        log.info("%s: %d instances, m=%.4f, mean components %.3f", name, size,
                 manifests[name]["edge_marginal"], manifests[name]["mean_components"])
    config_mod.write_snapshot(cfg, out, "generate")
    return manifests


def _model_config(cfg):
    model = {k: v for k, v in cfg["model"].items()}
    return ModelConfig(conditioner=ConditionerConfig(**cfg["conditioner"]), seed=cfg["seed"], **model)


def _train_config(cfg):
    return TrainConfig(seed=cfg["seed"], **cfg["train"])


def cmd_train(cfg, provided, args):
    data_dir, out = Path(args.data), Path(args.out)
    instances = load_records(data_dir / "train.jsonl")
    val_path = data_dir / "val.jsonl"
    val = load_records(val_path) if val_path.exists() and val_path.stat().st_size else None
    manifest = load_manifest(data_dir / "train.jsonl")
    n_expected = cfg["data"]["n"] if "data.n" in provided else None
    if n_expected is not None and manifest["n"] != n_expected:
        raise ConfigError(f"dataset n={manifest['n']} does not match data.n={n_expected}")
    out.mkdir(parents=True, exist_ok=True)
    config_mod.write_snapshot(cfg, out, "train", {"data": str(data_dir)})
    ckpt, log_path = out / "checkpoint.ckpt", out / "train_log.jsonl"
    if not args.resume and log_path.exists():
        log_path.unlink()
    try:
        result = train(instances, _model_config(cfg), _train_config(cfg), val=val, checkpoint_path=ckpt,
                       log_path=log_path, resume=args.resume, n_expected=n_expected)
    except ValueError as exc:
        if isinstance(exc, (ConfigError, CapacityError)):
            raise
        raise ConfigError(str(exc)) from None
    return result


def _sample_chunk(job):
    ckpt, instances, seed, final = job
    bundle, _, _ = load_bundle(ckpt)
    coords, _, d, k = stack(instances)
    seeds = [[seed, inst.index] for inst in instances]
    binary, probs = bundle.sample(coords, d, k, seeds, final=final)
    return bundle.task, bundle.train_cfg.T, binary, probs


def _chunks(items, workers):
    size = max(1, -(-len(items) // max(workers, 1)))
    return [items[i:i + size] for i in range(0, len(items), size)]


def run_sampling(ckpt, instances, seed, final="threshold", workers=1):
    jobs = [(str(ckpt), chunk, seed, final) for chunk in _chunks(instances, workers)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sample_chunk, jobs))
    else:
        parts = [_sample_chunk(job) for job in jobs]
    task, T = parts[0][0], parts[0][1]
    return task, T, np.concatenate([p[2] for p in parts]), np.concatenate([p[3] for p in parts])


SOURCES = {"supervised": "oneshot", "vae": "vae", "diffusion": "ddpm"}


def cmd_sample(cfg, provided, args):
    ckpt, out = Path(args.checkpoint), Path(args.out)
    if not ckpt.exists():
        raise FileNotFoundError(ckpt)
    instances = load_records(args.input)
    task, T, binary, _ = run_sampling(ckpt, instances, cfg["seed"], cfg["sample"]["final"], cfg["workers"])
    preds, extras = [], []
    for inst, adj in zip(instances, binary):
        preds.append(Instance(inst.coords, inst.k, inst.d, adj.astype(np.int8), inst.index))
        extra = {"source": SOURCES[task], "seed": cfg["seed"]}
        if task == "diffusion":
            extra["T"] = T
        extras.append(extra)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "predictions.jsonl", preds, extras)
    config_mod.write_snapshot(cfg, out, "sample", {"checkpoint": str(ckpt), "input": str(args.input)})
    return preds


def cmd_eval(cfg, provided, args):
    split = load_records(args.split)
    coords, labels, d, k = stack(split)
    out = Path(args.out)
    threshold = cfg["eval"]["threshold"]
    if args.predictions:
        by_index = {inst.index: inst for inst in load_records(args.predictions)}
        missing = [inst.index for inst in split if inst.index not in by_index]
        if missing:
            raise ConfigError(f"predictions missing for indices {missing[:5]}")
        pred = np.stack([by_index[inst.index].label for inst in split]).astype(np.float64)
        threshold = 0.5 if threshold is None else threshold
        binary = None
    elif args.checkpoint:
        if not Path(args.checkpoint).exists():
            raise FileNotFoundError(args.checkpoint)
        bundle, _, _ = load_bundle(args.checkpoint)
        _, _, binary, pred = run_sampling(args.checkpoint, split, cfg["seed"], cfg["sample"]["final"],
                                          cfg["workers"])
        if threshold is None:
            threshold = bundle.threshold if bundle.task != "diffusion" else 0.5
        if bundle.task != "diffusion":
            binary = None
    else:
        raise ConfigError("eval needs --predictions or --checkpoint")
    report, breakdown = evaluate(pred, labels, coords, d, k, threshold=threshold, binary=binary)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, breakdown, out / "report.txt", out / "breakdown.jsonl")
    config_mod.write_snapshot(cfg, out, "eval", {"split": str(args.split), "threshold": threshold})
    return report


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval}


def build_parser():
    parser = argparse.ArgumentParser(prog="camlink", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set model.family=graph_transformer")
    common.add_argument("--seed", type=int, help="global seed (same as --set seed=N)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="sample and exactly solve instances")
    p.add_argument("--out", required=True, help="output directory for train/val/test files")

    p = sub.add_parser("train", parents=[common], help="train a one-shot, VAE or diffusion model")
    p.add_argument("--data", required=True, help="directory written by `generate`")
    p.add_argument("--out", required=True, help="run directory (checkpoint, log)")
    p.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")

    p = sub.add_parser("sample", parents=[common], help="predict link sets for a coordinate file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="records file (labels ignored)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="compute the metric report")
    p.add_argument("--split", required=True, help="labelled records file")
    p.add_argument("--predictions", help="records file written by `sample`")
    p.add_argument("--checkpoint", help="evaluate a checkpoint directly")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        cfg, provided = config_mod.resolve(args.config, overrides)
        COMMANDS[args.command](cfg, provided, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())

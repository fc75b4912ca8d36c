"""Command-line surface: train, sweep, sample, eval, report.

Every expected failure exits nonzero with a single `error: <category>:
<message>` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore
from .config import load_config, resolve_config
from .datasets import make_dataset
from .errors import ConfigError, DataError, SparseDmError
from .metrics import quality_report
from .models import build_denoiser
from .rng import STREAM_DATA, STREAM_INIT, Rng
from .runner import (
    RUN_FILE,
    collect_records,
    comparison_table,
    generate_samples,
    render_table_csv,
    run_experiment,
    run_sweep,
)
from .training import OptimizerState


def _cmd_train(args) -> int:
    config = load_config(args.config)
    record = run_experiment(config, args.out)
    q = record.quality
    dest = f" -> {args.out}" if args.out else ""
    print(f"method={config.method} frechet={q['frechet']:.6g} kid={q['kid']:.6g}{dest}")
    return 0


def _cmd_sweep(args) -> int:
    path = Path(args.grid)
    if not path.exists():
        raise ConfigError(f"grid file not found: {path}")
    try:
        grid = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"grid file {path} is not valid JSON: {exc}") from exc
    results = run_sweep(grid, args.out, jobs=args.jobs)
    failed = [r for r in results if r["status"] != "ok"]
    print(f"{len(results) - len(failed)}/{len(results)} runs ok -> {args.out}")
    for r in failed:
        print(f"failed: {r['name']}: {r['category']}: {r['message']}", file=sys.stderr)
    return 0 if not failed else 1


def _cmd_sample(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if args.config:
        config = load_config(args.config)
    else:
        run_json = ckpt_path.parent / RUN_FILE
        if not run_json.exists():
            raise ConfigError(
                f"no {RUN_FILE} next to the checkpoint; pass --config with the run's config"
            )
        config = resolve_config(json.loads(run_json.read_text()).get("config", {}))

    rng = Rng(config.seed)
    dataset = make_dataset(config.dataset, config.dataset_size, rng.stream(STREAM_DATA))
    model = build_denoiser(config.denoiser_spec(), rng.stream(STREAM_INIT))
    opt = OptimizerState.init(model.registry, lr=config.lr, weight_decay=config.weight_decay)
    restore(load_checkpoint(ckpt_path), model.registry, opt)

    samples = generate_samples(
        model, config, dataset, args.n, ddim_steps=args.steps, eta=args.eta
    )
    np.save(args.out, samples)
    print(f"{len(samples)} samples -> {args.out}")
    return 0


def _load_samples(path: str) -> np.ndarray:
    try:
        arr = np.load(path)
    except ValueError as exc:
        raise DataError(f"{path} is not a sample array: {exc}") from exc
    if arr.ndim < 2:
        raise DataError(f"{path}: expected a batch of samples, got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def _cmd_eval(args) -> int:
    samples = _load_samples(args.samples)
    reference = _load_samples(args.reference)
    report = quality_report(samples, reference)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    records = collect_records(args.dir)
    if not records:
        raise DataError(f"no {RUN_FILE} files found under {args.dir}")
    text = render_table_csv(comparison_table(records))
    if args.out:
        Path(args.out).write_text(text)
        print(f"table -> {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsedm", description="Sparse diffusion training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="directory for run.json, csvs, samples, checkpoint")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="run a grid of experiments")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("sample", help="draw samples from a checkpointed model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--steps", type=int, default=None, help="DDIM steps (default: from config)")
    p.add_argument("--eta", type=float, default=None, help="DDIM eta (default: from config)")
    p.add_argument("--config", default=None, help="config JSON (default: run.json next to checkpoint)")
    p.add_argument("--out", default="sampled.npy")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="score one sample file against a reference file")
    p.add_argument("--samples", required=True)
    p.add_argument("--reference", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render the comparison table for a sweep directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SparseDmError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

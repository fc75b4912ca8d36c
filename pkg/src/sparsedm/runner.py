"""Experiment orchestration: single runs, sweeps, emission, resumption.

A run is fully determined by (config, seed): dataset, init, mask, batch
draws, and sampling noise all come from separate streams of one seeded
generator, so re-running a config reproduces run.json exactly up to the
wall-clock field. Sweep runs land in per-run directories whose names embed
method, sparsity, prune ratio, and seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore, save_checkpoint
from .config import ExperimentConfig, resolve_config
from .datasets import Dataset, make_dataset
from .diffusion import ddim_sample, linear_schedule
from .errors import ConfigError, SparseDmError
from .metrics import quality_report, train_flops
from .models import build_denoiser, masked_param_count
from .rng import STREAM_DATA, STREAM_INIT, STREAM_SAMPLE, Rng
from .topology import global_sparsity
from .training import (
    DYNAMIC_METHODS,
    ExplorationSchedule,
    OptimizerState,
    TrainResult,
    train,
)

CHECKPOINT_FILE = "checkpoint.bin"
RUN_FILE = "run.json"

# Conventions a reader of run.json should not have to guess.
RUN_METADATA = {
    "format": "sparsedm-run/1",
    "exploration_unit": "iterations",
    "bias_masking": "never",
    "sample_clipping": "none",
    "dense_gradient_batches": 1,
    "quality_features": "raw-coordinates",
}


@dataclass
class RunRecord:
    config: dict
    metadata: dict
    losses: list
    events: list
    quality: dict
    flops: dict
    params: dict
    global_sparsity: float | None
    mask_digest: str | None
    wall_clock_sec: float
    artifacts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"not a run record: {exc}") from exc


def _exploration_of(config: ExperimentConfig) -> ExplorationSchedule | None:
    if config.method not in DYNAMIC_METHODS:
        return None
    return ExplorationSchedule(
        every=config.explore_every,
        prune_ratio=config.prune_ratio,
        growth="gradient" if config.method == "rigl" else "random",
    )


def generate_samples(model, config: ExperimentConfig, dataset: Dataset, count: int,
                     ddim_steps: int | None = None, eta: float | None = None,
                     rng: Rng | None = None) -> np.ndarray:
    """Draw de-standardized samples from a trained model."""
    schedule = linear_schedule(config.diffusion_steps, config.beta_start, config.beta_end)
    rng = rng if rng is not None else Rng(config.seed).stream(STREAM_SAMPLE)
    standardized = ddim_sample(
        model,
        schedule,
        config.ddim_steps if ddim_steps is None else ddim_steps,
        config.eta if eta is None else eta,
        rng,
        (count, *dataset.data_shape),
    )
    return dataset.destandardize(standardized)


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> RunRecord:
    """Train, sample, score, and (optionally) persist one experiment."""
    start = time.perf_counter()
    rng = Rng(config.seed)
    dataset = make_dataset(config.dataset, config.dataset_size, rng.stream(STREAM_DATA))
    result = train(config, dataset.samples, rng)

    samples = generate_samples(
        result.model, config, dataset, config.sample_count, rng=rng.stream(STREAM_SAMPLE)
    )
    quality = quality_report(samples, dataset.raw(), kid_block_size=config.kid_block_size)

    geoms = result.registry.maskable_geoms()
    flops = train_flops(
        geoms, result.mask, config.steps, _exploration_of(config), ddim_steps=config.ddim_steps
    )
    total, active = masked_param_count(result.registry, result.mask)

    record = RunRecord(
        config=config.to_dict(),
        metadata=dict(RUN_METADATA),
        losses=[[step, loss] for step, loss in result.losses],
        events=[
            {"step": e.step, "pruned": dict(e.pruned), "grown": dict(e.grown)}
            for e in result.events
        ],
        quality=quality.to_dict(),
        flops=flops.to_dict(),
        params={"total": total, "active": active, "ratio": active / total},
        global_sparsity=None if result.mask is None else global_sparsity(result.mask),
        mask_digest=None if result.mask is None else result.mask.digest(),
        wall_clock_sec=0.0,
        artifacts={},
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(result.registry, result.mask, result.opt, out / CHECKPOINT_FILE)
        record.artifacts["checkpoint"] = {"path": CHECKPOINT_FILE}
        record.wall_clock_sec = time.perf_counter() - start
        emit_metrics(record, out, samples=samples)
    else:
        record.wall_clock_sec = time.perf_counter() - start
    return record


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def emit_metrics(record: RunRecord, out_dir: str | Path, samples: np.ndarray | None = None) -> None:
    """Write run.json, losses.csv, events.csv, and samples.npy into out_dir.

    Artifact hashes are filled in before run.json is written, so the record
    on disk always describes the files sitting next to it.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        w.writerows(record.losses)

    with open(out / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "layer", "pruned", "grown"])
        for event in record.events:
            for layer in event["pruned"]:
                w.writerow([event["step"], layer, event["pruned"][layer], event["grown"][layer]])

    if samples is not None:
        np.save(out / "samples.npy", np.asarray(samples, dtype=np.float64))
        record.artifacts["samples"] = {"path": "samples.npy"}

    for info in record.artifacts.values():
        info["sha256"] = _sha256(out / info["path"])

    (out / RUN_FILE).write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")


def resume_training(config: ExperimentConfig, dataset: Dataset, ckpt_path: str | Path) -> TrainResult:
    """Continue a checkpointed run up to config.steps.

    Exactly reproduces the uninterrupted trajectory: per-step substreams mean
    no generator state needs to survive the restart.
    """
    rng = Rng(config.seed)
    model = build_denoiser(config.denoiser_spec(), rng.stream(STREAM_INIT))
    opt = OptimizerState.init(
        model.registry,
        lr=config.lr,
        weight_decay=config.weight_decay,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )
    ckpt = load_checkpoint(ckpt_path)
    mask = restore(ckpt, model.registry, opt)
    return train(
        config,
        dataset.samples,
        rng,
        model=model,
        opt=opt,
        mask=mask if config.method != "dense" else None,
        start_step=ckpt.step,
    )


# --- sweeps ---------------------------------------------------------------

_GRID_KEYS = {"methods", "sparsities", "prune_ratios", "seeds", "base"}
_GRID_DEFAULTS = {
    "methods": ["dense", "static", "rigl", "magran"],
    "sparsities": [0.1, 0.25, 0.5, 0.75, 0.9],
    "prune_ratios": [0.5, 0.05],
    "seeds": [0, 1, 2],
}


def expand_grid(grid: dict) -> list[tuple[str, dict]]:
    """Cross product of methods x sparsities x prune ratios x seeds.

    Axes a method does not use are not multiplied: dense runs once per seed,
    static once per (sparsity, seed).
    """
    if not isinstance(grid, dict):
        raise ConfigError("grid must be a JSON object")
    unknown = sorted(set(grid) - _GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid key {unknown[0]!r}")
    merged = {**_GRID_DEFAULTS, **{k: v for k, v in grid.items() if k != "base"}}
    base = grid.get("base", {})
    if not isinstance(base, dict):
        raise ConfigError("grid 'base' must be an object of config overrides")
    for key in ("methods", "sparsities", "prune_ratios", "seeds"):
        if not isinstance(merged[key], list) or not merged[key]:
            raise ConfigError(f"grid {key!r} must be a non-empty list")

    jobs: list[tuple[str, dict]] = []
    for method in merged["methods"]:
        if method == "dense":
            combos = [(None, None)]
        elif method == "static":
            combos = [(s, None) for s in merged["sparsities"]]
        else:
            combos = [(s, p) for s in merged["sparsities"] for p in merged["prune_ratios"]]
        for sparsity, prune in combos:
            for seed in merged["seeds"]:
                raw = dict(base)
                raw["method"] = method
                raw["seed"] = seed
                name = f"method={method}"
                if sparsity is not None:
                    raw["sparsity"] = sparsity
                    name += f"_S={sparsity:g}"
                if prune is not None:
                    raw["prune_ratio"] = prune
                    name += f"_p={prune:g}"
                name += f"_seed={seed}"
                jobs.append((name, raw))
    names = [n for n, _ in jobs]
    if len(set(names)) != len(names):
        raise ConfigError("grid expansion produced colliding run names")
    return jobs


def _run_one(args: tuple[str, dict, str]) -> dict:
    name, raw, out_dir = args
    try:
        config = resolve_config(raw)
        record = run_experiment(config, Path(out_dir) / name)
        return {"name": name, "status": "ok", "record": record.to_dict()}
    except SparseDmError as exc:
        return {"name": name, "status": "error", "category": exc.category, "message": str(exc)}
    except Exception as exc:  # individual-run failure never kills the sweep
        return {"name": name, "status": "error", "category": "internal", "message": repr(exc)}


def run_sweep(grid: dict, out_dir: str | Path, jobs: int = 1) -> list[dict]:
    """Run a grid, one directory per run, then write summary.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    work = [(name, raw, str(out)) for name, raw in expand_grid(grid)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    write_summary(results, out / "summary.csv")
    return results


SUMMARY_COLUMNS = [
    "name", "method", "sparsity", "prune_ratio", "seed", "status",
    "frechet", "kid", "params_ratio", "train_flops_ratio", "test_flops_ratio",
]


def write_summary(results: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for res in results:
            row = {"name": res["name"], "status": res["status"]}
            if res["status"] == "ok":
                rec = res["record"]
                cfg = rec["config"]
                row.update(
                    method=cfg["method"],
                    sparsity=cfg["sparsity"],
                    prune_ratio=cfg["prune_ratio"],
                    seed=cfg["seed"],
                    frechet=rec["quality"]["frechet"],
                    kid=rec["quality"]["kid"],
                    params_ratio=rec["params"]["ratio"],
                    train_flops_ratio=rec["flops"]["train_ratio"],
                    test_flops_ratio=rec["flops"]["test_ratio"],
                )
            else:
                row.update(method=res.get("category"), sparsity="", prune_ratio="", seed="")
            w.writerow(row)


def collect_records(sweep_dir: str | Path) -> list[RunRecord]:
    """Load every run.json under a sweep directory."""
    records = []
    for path in sorted(Path(sweep_dir).glob(f"*/{RUN_FILE}")):
        records.append(RunRecord.from_dict(json.loads(path.read_text())))
    return records


def comparison_table(records: list[RunRecord]) -> list[dict]:
    """Median quality and exact cost ratios per (method, S, p), over seeds."""
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        cfg = rec.config
        key = (cfg["method"], cfg["sparsity"], cfg["prune_ratio"])
        groups.setdefault(key, []).append(rec)
    rows = []
    for (method, sparsity, prune), group in sorted(groups.items(), key=lambda kv: str(kv[0])):
        rows.append(
            {
                "method": method,
                "sparsity": sparsity,
                "prune_ratio": prune if method in DYNAMIC_METHODS else "",
                "seeds": len(group),
                "frechet_median": float(np.median([r.quality["frechet"] for r in group])),
                "kid_median": float(np.median([r.quality["kid"] for r in group])),
                "params_ratio": group[0].params["ratio"],
                "train_flops_ratio": group[0].flops["train_ratio"],
                "test_flops_ratio": group[0].flops["test_ratio"],
            }
        )
    return rows


def render_table_csv(rows: list[dict]) -> str:
    cols = [
        "method", "sparsity", "prune_ratio", "seeds", "frechet_median",
        "kid_median", "params_ratio", "train_flops_ratio", "test_flops_ratio",
    ]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"

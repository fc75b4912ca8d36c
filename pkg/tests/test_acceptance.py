"""End-to-end acceptance suite.

Each criterion prints one PASS/FAIL line (visible through pytest's capture)
and asserts the same condition. Criterion 6 trains the full 27-run sparsity
sweep and dominates the suite's wall-clock time.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from sparsedm import tensor as T
from sparsedm.config import ExperimentConfig
from sparsedm.datasets import make_dataset
from sparsedm.diffusion import ddim_sample, diffusion_loss, linear_schedule
from sparsedm.metrics import frechet_distance, kid_blocks, kid_mmd, layer_flops, train_flops
from sparsedm.models import DenoiserSpec, build_denoiser
from sparsedm.rng import STREAM_DATA, Rng
from sparsedm.runner import run_experiment
from sparsedm.tensor import Tensor
from sparsedm.checkpoint import load_checkpoint, restore, save_checkpoint
from sparsedm.topology import (
    LayerGeom,
    SparsityMask,
    allocate_er,
    grow_gradient,
    grow_random,
    sample_mask,
    top_mag_prune,
)
from sparsedm.training import OptimizerState, train

from test_tensor import check_grads
from test_topology import (
    S_GRID,
    brute_grow,
    brute_prune,
    er_factor,
    erk_factor,
    oracle_densities,
    random_architecture,
)


def report(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# --- criterion 1: mask mechanics -------------------------------------------


def test_criterion_1_mask_mechanics(capsys):
    failures = []

    # sparsity conservation across 25 exploration cycles
    geoms = [LayerGeom("a", "dense", 30, 20), LayerGeom("b", "dense", 20, 10)]
    plan = allocate_er(geoms, 0.6)
    mask = sample_mask(plan, geoms, Rng(1, 3))
    counts0 = mask.active_counts()
    r = Rng(2, 4)
    for cycle in range(25):
        w = {g.layer_id: r.normal((g.fan_in, g.fan_out)) for g in geoms}
        pruned = top_mag_prune(w, mask, 0.3)
        k = {lid: counts0[lid] - a for lid, a in pruned.active_counts().items()}
        if cycle % 2 == 0:
            g = {lid: r.normal(w[lid].shape) for lid in w}
            mask = grow_gradient(g, pruned, k)
        else:
            mask = grow_random(pruned, k, r.at(cycle))
        if mask.active_counts() != counts0:
            failures.append(f"cycle {cycle} changed per-layer counts")
            break

    # prune/grow equality against brute force on 100 random instances
    rng = Rng(3)
    for trial in range(100):
        shape = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        n = shape[0] * shape[1]
        bits = np.zeros(n, dtype=bool)
        bits[rng.choice(n, int(rng.integers(1, n + 1)))] = True
        bits = bits.reshape(shape)
        w = rng.normal(shape)
        if trial % 3 == 0:
            w = np.round(w)
        p = float(rng.uniform()) * 0.9
        pruned = top_mag_prune({"l": w}, SparsityMask({"l": bits}), p)
        if not np.array_equal(pruned.bits["l"], brute_prune(w, bits, p)):
            failures.append(f"prune mismatch on instance {trial}")
            break
        g = rng.normal(shape)
        if trial % 4 == 0:
            g = np.round(g)
        k = int(bits.sum() - pruned.bits["l"].sum())
        grown = grow_gradient({"l": g}, pruned, {"l": k})
        if not np.array_equal(grown.bits["l"], brute_grow(g, pruned.bits["l"], k)):
            failures.append(f"grow mismatch on instance {trial}")
            break

    # dense-limit bitwise equivalence over 200 steps
    cfg = dict(widths=(32, 32), time_emb_dim=8, steps=200, batch_size=32, log_every=50)
    data = make_dataset("gauss8", 512, Rng(9, 1)).samples
    res_dense = train(ExperimentConfig(**cfg), data, Rng(7))
    for method in ("static", "rigl", "magran"):
        res = train(
            ExperimentConfig(method=method, sparsity=0.0, prune_ratio=0.0, explore_every=50, **cfg),
            data,
            Rng(7),
        )
        for (name, p), (_, q) in zip(res_dense.registry.named_params(), res.registry.named_params()):
            if not np.array_equal(p.data, q.data):
                failures.append(f"{method} S=0 p=0 diverged from dense at {name}")
                break

    report(
        capsys, 1, not failures,
        failures[0] if failures else
        "conservation over 25 cycles; prune/grow == brute force on 100 instances; "
        "S=0 p=0 bitwise == dense over 200 steps",
    )


# --- criterion 2: ER/ERK allocation ----------------------------------------


def test_criterion_2_er_erk_allocation(capsys):
    failures = []
    worst_gap = 0.0
    for arch_seed in range(50):
        rng = Rng(1000 + arch_seed)
        allow_conv = arch_seed % 2 == 1
        geoms = random_architecture(rng, allow_conv)
        factor = erk_factor if allow_conv else er_factor
        for s in S_GRID:
            from sparsedm.topology import allocate_erk

            plan = (allocate_erk if allow_conv else allocate_er)(geoms, s)
            oracle = oracle_densities([factor(g) for g in geoms], [g.param_count for g in geoms], s)
            gap = max(abs(plan.densities[g.layer_id] - o) for g, o in zip(geoms, oracle))
            worst_gap = max(worst_gap, gap)
            if gap > 1e-7:
                failures.append(f"arch {arch_seed} S={s}: density gap {gap:.2e} vs bisection oracle")
            total = sum(g.param_count for g in geoms)
            used = sum(plan.densities[g.layer_id] * g.param_count for g in geoms)
            if abs(used - (1.0 - s) * total) > 1e-9 * total:
                failures.append(f"arch {arch_seed} S={s}: budget off by {used - (1 - s) * total:.2e}")
    report(
        capsys, 2, not failures,
        failures[0] if failures else
        f"50 architectures x {len(S_GRID)} sparsities match the bisection oracle "
        f"(worst density gap {worst_gap:.1e}) with exact budgets",
    )


# --- criterion 3: cost-column arithmetic -----------------------------------


def test_criterion_3_cost_columns(capsys):
    # all-weight (fully maskable) stack so the params ratio is pure 1-S
    geoms = [
        LayerGeom("fc1", "dense", 18, 128),
        LayerGeom("fc2", "dense", 128, 128),
        LayerGeom("fc3", "dense", 128, 128),
        LayerGeom("fc4", "dense", 128, 2),
    ]
    total = sum(g.param_count for g in geoms)
    failures = []
    ratios = {}
    for s, expected in ((0.25, 0.75), (0.5, 0.50), (0.9, 0.10)):
        plan = allocate_er(geoms, s)
        mask = sample_mask(plan, geoms, Rng(4, 3))
        ratio = mask.total_active() / total
        ratios[s] = ratio
        slack = 0.5 * len(geoms) / total
        if abs(ratio - expected) > slack:
            failures.append(f"S={s}: params ratio {ratio:.6f} vs {expected} (slack {slack:.1e})")
        if round(ratio, 2) != expected:
            failures.append(f"S={s}: params ratio {ratio:.6f} does not print as {expected:.2f}x")
        rep = train_flops(geoms, mask, steps=100)
        independent = sum(layer_flops(g, mask.bits[g.layer_id].mean()) for g in geoms) / sum(
            layer_flops(g, 1.0) for g in geoms
        )
        if not math.isclose(rep.test_ratio, independent, rel_tol=1e-12, abs_tol=0.0):
            failures.append(f"S={s}: FLOPs ratio {rep.test_ratio} != identity {independent}")
    report(
        capsys, 3, not failures,
        failures[0] if failures else
        "params ratios {:.4f}/{:.4f}/{:.4f} print as 0.75x/0.50x/0.10x; "
        "FLOPs ratio identity exact".format(ratios[0.25], ratios[0.5], ratios[0.9]),
    )


# --- criterion 4: diffusion core -------------------------------------------


def test_criterion_4_diffusion_core(capsys):
    failures = []
    sched = linear_schedule(1000, 1e-4, 2e-2)

    # cumulative-product identity
    prods = np.cumprod(1.0 - sched.betas)
    if not np.allclose(sched.alpha_bars[1:], prods, rtol=1e-12):
        failures.append("alpha_bar is not the cumulative product of (1 - beta)")

    # Monte-Carlo composition of 50 sequential steps vs the closed form
    r = Rng(11)
    t_target = 50
    n = 200_000
    x = np.full((n, 1), 0.7)
    for t in range(1, t_target + 1):
        b = sched.beta(t)
        x = np.sqrt(1.0 - b) * x + np.sqrt(b) * r.normal((n, 1))
    ab = sched.alpha_bar(t_target)
    mean_err = abs(x.mean() - np.sqrt(ab) * 0.7) / (np.sqrt(ab) * 0.7)
    var_err = abs(x.var() - (1.0 - ab)) / (1.0 - ab)
    if mean_err > 0.02 or var_err > 0.02:
        failures.append(f"50-step composition off: mean err {mean_err:.3f}, var err {var_err:.3f}")

    # gradient checks through the full loss on both architectures
    for spec in (
        DenoiserSpec(kind="mlp", widths=(6,), time_emb_dim=4),
        DenoiserSpec(kind="conv", hidden_channels=(2,), image_size=4, time_emb_dim=4),
    ):
        model = build_denoiser(spec, Rng(12, 2))
        shape = (3, *spec.data_shape)
        x0 = Tensor(Rng(13).normal(shape))
        eps = Tensor(Rng(14).normal(shape))
        params = [p for _, p in model.registry.named_params()]
        try:
            check_grads(
                lambda: diffusion_loss(model, x0, np.array([2, 500, 999]), eps, sched), params
            )
        except AssertionError as exc:
            failures.append(f"{spec.kind} gradient check: {exc}")

    # DDIM eta=0 determinism
    model = build_denoiser(DenoiserSpec(kind="mlp", widths=(8,), time_emb_dim=4), Rng(15, 2))
    a = ddim_sample(model, sched, 10, 0.0, Rng(16, 5), (20, 2))
    b = ddim_sample(model, sched, 10, 0.0, Rng(16, 5), (20, 2))
    if not np.array_equal(a, b):
        failures.append("ddim eta=0 is not deterministic")

    # perfect denoiser drives every trajectory to the data point
    c = np.array([0.3, -1.1])

    class Perfect:
        def __call__(self, x_t, t):
            ab_t = float(sched.alpha_bar(int(np.max(t))))
            return T.scale(T.add(x_t, Tensor(-np.sqrt(ab_t) * c)), 1.0 / np.sqrt(1.0 - ab_t))

    out = ddim_sample(Perfect(), sched, 50, 0.0, Rng(17, 5), (64, 2))
    gap = np.max(np.abs(out - c))
    if gap > 1e-3:
        failures.append(f"perfect-denoiser endpoint off by {gap:.2e}")

    report(
        capsys, 4, not failures,
        failures[0] if failures else
        f"alpha-bar identity; composition within 2%; grads < 1e-4; "
        f"eta=0 deterministic; perfect denoiser converges (max gap {gap:.1e})",
    )


# --- criterion 5: metric suite ---------------------------------------------


def test_criterion_5_metrics(capsys):
    failures = []
    x = Rng(20).normal((300, 2))
    v0 = frechet_distance(x, x.copy())
    if v0 >= 1e-9:
        failures.append(f"identical sets gave {v0:.2e}")

    a = Rng(21).normal((500, 1))
    a = (a - a.mean()) / a.std(ddof=1)
    v9 = frechet_distance(a, a + 3.0)
    if abs(v9 - 9.0) > 1e-9:
        failures.append(f"1-D mean shift gave {v9}")

    r = Rng(22)
    v2 = frechet_distance(r.normal((100_000, 2)), 2.0 * r.normal((100_000, 2)))
    if abs(v2 - 2.0) > 0.1:
        failures.append(f"variance case gave {v2:.4f}, want 2 +- 5%")

    xs, ys = Rng(23).normal((20, 3)), Rng(24).normal((20, 3)) + 0.4
    d = xs.shape[1]
    kern = lambda u, v: (float(u @ v) / d + 1.0) ** 3
    sxx = sum(kern(xs[i], xs[j]) for i in range(20) for j in range(20) if i != j) / (20 * 19)
    syy = sum(kern(ys[i], ys[j]) for i in range(20) for j in range(20) if i != j) / (20 * 19)
    sxy = sum(kern(xs[i], ys[j]) for i in range(20) for j in range(20)) / 400
    brute = sxx + syy - 2 * sxy
    got = kid_mmd(xs, ys, block_size=20)
    if not math.isclose(got, brute, rel_tol=1e-12):
        failures.append(f"KID {got} != brute-force {brute}")

    rr = Rng(25)
    blocks = kid_blocks(rr.normal((1000, 2)), rr.normal((1000, 2)), block_size=100)
    se = blocks.std(ddof=1) / np.sqrt(len(blocks))
    if abs(blocks.mean()) >= 3 * se:
        failures.append(f"null KID {blocks.mean():.2e} outside 3 SE ({se:.2e})")

    report(
        capsys, 5, not failures,
        failures[0] if failures else
        f"frechet 0/9/{v2:.3f}; KID == brute force at n=20; null within 3 SE",
    )


# --- criterion 6: desk-scale sparsity sweep --------------------------------

SWEEP_SEEDS = (0, 1, 2)
SWEEP_CELLS = {
    "dense": dict(method="dense"),
    "static_25": dict(method="static", sparsity=0.25),
    "static_90": dict(method="static", sparsity=0.9),
    "rigl_25": dict(method="rigl", sparsity=0.25),
    "rigl_90": dict(method="rigl", sparsity=0.9),
    "magran_25": dict(method="magran", sparsity=0.25),
    "magran_90": dict(method="magran", sparsity=0.9),
    "rigl_90_p50": dict(method="rigl", sparsity=0.9, prune_ratio=0.5),
    "magran_90_p50": dict(method="magran", sparsity=0.9, prune_ratio=0.5),
}


@pytest.fixture(scope="module")
def sweep_medians(request):
    """Train the 27-run grid behind criterion 6 (the slow part of the suite)."""
    values: dict[str, list[float]] = {}
    capman = request.config.pluginmanager.getplugin("capturemanager")
    with capman.global_and_fixture_disabled():
        print("[criterion 6] training 27 runs (about ten minutes on one cpu)...")
    for name, overrides in SWEEP_CELLS.items():
        values[name] = []
        for seed in SWEEP_SEEDS:
            record = run_experiment(ExperimentConfig(seed=seed, **overrides))
            values[name].append(record.quality["frechet"])
    medians = {name: float(np.median(vals)) for name, vals in values.items()}
    return medians, values


def test_criterion_6_sparsity_sweep(capsys, sweep_medians):
    medians, values = sweep_medians
    failures = []

    dense = medians["dense"]
    for cell in ("static_25", "rigl_25", "magran_25"):
        if medians[cell] > 1.5 * dense:
            failures.append(f"(i) {cell} median {medians[cell]:.4f} > 1.5 x dense {dense:.4f}")

    for method in ("static", "rigl", "magran"):
        lo, hi = medians[f"{method}_25"], medians[f"{method}_90"]
        if not hi > lo:
            failures.append(f"(ii) {method}: S=0.9 median {hi:.4f} not above S=0.25 {lo:.4f}")

    info = []
    for method in ("rigl", "magran"):
        p05, p50 = medians[f"{method}_90"], medians[f"{method}_90_p50"]
        if p05 > p50:
            failures.append(f"(iii) {method}: p=0.05 median {p05:.4f} > p=0.5 median {p50:.4f}")
        per_seed = [
            a <= b for a, b in zip(values[f"{method}_90"], values[f"{method}_90_p50"])
        ]
        if not all(per_seed):
            info.append(
                f"(iii) {method} seeds disagree: p05={values[f'{method}_90']} "
                f"p50={values[f'{method}_90_p50']} (informational)"
            )

    detail = (
        "(i) S=0.25 medians {:.4f}/{:.4f}/{:.4f} vs 1.5 x dense {:.4f}; "
        "(ii) S=0.9 worse per method; (iii) p=0.05 <= p=0.5 at S=0.9".format(
            medians["static_25"], medians["rigl_25"], medians["magran_25"], 1.5 * dense
        )
    )
    if info:
        with capsys.disabled():
            for line in info:
                print(f"[criterion 6] {line}")
    report(capsys, 6, not failures, "; ".join(failures) if failures else detail)


# --- criterion 7: infrastructure -------------------------------------------


def test_criterion_7_infrastructure(capsys, tmp_path):
    failures = []
    fast = dict(
        widths=(16, 16), time_emb_dim=8, steps=30, batch_size=16, dataset_size=128,
        sample_count=48, ddim_steps=5, kid_block_size=24, log_every=10, explore_every=10,
    )
    cfg = ExperimentConfig(method="rigl", sparsity=0.5, prune_ratio=0.3, **fast)

    # checkpoint round trip, byte for byte
    run_experiment(cfg, tmp_path / "a")
    model = build_denoiser(cfg.denoiser_spec(), Rng(0, 2))
    opt = OptimizerState.init(model.registry, lr=cfg.lr, weight_decay=cfg.weight_decay)
    mask = restore(load_checkpoint(tmp_path / "a" / "checkpoint.bin"), model.registry, opt)
    save_checkpoint(model.registry, mask, opt, tmp_path / "resaved.bin")
    if (tmp_path / "a" / "checkpoint.bin").read_bytes() != (tmp_path / "resaved.bin").read_bytes():
        failures.append("checkpoint save-load-save is not byte-identical")

    # resume equivalence to 1e-12
    short = ExperimentConfig(method="rigl", sparsity=0.5, prune_ratio=0.3, **{**fast, "steps": 20})
    run_experiment(short, tmp_path / "b")
    from sparsedm.runner import resume_training

    dataset = make_dataset(cfg.dataset, cfg.dataset_size, Rng(cfg.seed).stream(STREAM_DATA))
    resumed = resume_training(cfg, dataset, tmp_path / "b" / "checkpoint.bin")
    straight = train(cfg, dataset.samples, Rng(cfg.seed))
    for (name, p), (_, q) in zip(
        straight.registry.named_params(), resumed.registry.named_params()
    ):
        if np.max(np.abs(p.data - q.data)) > 1e-12:
            failures.append(f"resume drifted at {name}")
            break

    # sweep determinism of run.json under a fixed seed
    import json

    run_experiment(cfg, tmp_path / "c")
    a = json.loads((tmp_path / "a" / "run.json").read_text())
    c = json.loads((tmp_path / "c" / "run.json").read_text())
    a.pop("wall_clock_sec"), c.pop("wall_clock_sec")
    if a != c:
        failures.append("run.json differs between identical runs")

    report(
        capsys, 7, not failures,
        failures[0] if failures else
        "checkpoint byte-identical; resume within 1e-12; run.json deterministic",
    )

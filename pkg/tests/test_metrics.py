from __future__ import annotations

import numpy as np
import pytest

from sparsedm.errors import ShapeError
from sparsedm.metrics import (
    frechet_distance,
    kid_blocks,
    kid_mmd,
    layer_flops,
    mask_densities,
    quality_report,
    train_flops,
)
from sparsedm.rng import Rng
from sparsedm.topology import LayerGeom, SparsityMask, allocate_er, sample_mask
from sparsedm.training import ExplorationSchedule


def test_layer_flops_dense_examples():
    g = LayerGeom("fc", "dense", 10, 10)
    assert layer_flops(g, 1.0) == 200.0
    assert layer_flops(g, 0.25) == 50.0


def test_layer_flops_conv_example():
    g = LayerGeom("c", "conv", 8, 8, kernel_h=3, kernel_w=3, out_positions=64)
    assert layer_flops(g, 0.5) == 36864.0


def random_stack(seed):
    r = Rng(seed)
    geoms = []
    for i in range(int(r.integers(2, 6, 1)[0])):
        fi, fo = (int(v) for v in r.integers(3, 40, 2))
        geoms.append(LayerGeom(f"l{i}", "dense", fi, fo))
    return geoms


@pytest.mark.parametrize("seed", range(6))
def test_forward_ratio_is_parameter_weighted_density(seed):
    geoms = random_stack(seed)
    plan = allocate_er(geoms, 0.4)
    mask = sample_mask(plan, geoms, Rng(seed, 3))
    report = train_flops(geoms, mask, steps=10)
    dens = mask_densities(geoms, mask)
    expected = sum(layer_flops(g, dens[g.layer_id]) for g in geoms) / sum(
        layer_flops(g, 1.0) for g in geoms
    )
    assert report.test_ratio == expected
    assert 0.0 < report.test_ratio <= 1.0
    assert report.sparse_forward_flops <= report.dense_forward_flops


def test_train_flops_static_and_magran_have_no_overhead():
    geoms = [LayerGeom("a", "dense", 10, 10), LayerGeom("b", "dense", 10, 4)]
    bits = {
        "a": np.arange(100).reshape(10, 10) < 50,
        "b": np.ones((10, 4), dtype=bool),
    }
    mask = SparsityMask({k: v.copy() for k, v in bits.items()})
    rand = ExplorationSchedule(every=5, prune_ratio=0.5, growth="random")
    for exploration in (None, rand):
        rep = train_flops(geoms, mask, steps=100, exploration=exploration)
        assert rep.exploration_overhead_flops == 0.0
        assert rep.train_flops_total == 100 * 3.0 * rep.sparse_forward_flops
        assert rep.train_flops_dense_baseline == 100 * 3.0 * rep.dense_forward_flops


def test_rigl_overhead_closed_form():
    # One dense backward (= two dense forwards) every exploration step; ten
    # explorations over the run put the train ratio exactly 20F/(3000F) =
    # 1/150 above the no-overhead ratio.
    geoms = [LayerGeom("a", "dense", 12, 8), LayerGeom("b", "dense", 8, 6)]
    plan = allocate_er(geoms, 0.5)
    mask = sample_mask(plan, geoms, Rng(1, 3))
    steps = 1000
    grad = ExplorationSchedule(every=steps // 10, prune_ratio=0.5, growth="gradient")
    with_overhead = train_flops(geoms, mask, steps=steps, exploration=grad)
    without = train_flops(geoms, mask, steps=steps)
    assert with_overhead.exploration_overhead_flops == 10 * 2.0 * with_overhead.dense_forward_flops
    assert with_overhead.train_ratio - without.train_ratio == pytest.approx(1.0 / 150.0, rel=1e-12)


def test_train_flops_zero_steps():
    geoms = [LayerGeom("a", "dense", 4, 4)]
    rep = train_flops(geoms, None, steps=0)
    assert rep.train_flops_total == 0.0
    assert rep.train_flops_dense_baseline == 0.0
    assert rep.train_ratio == 1.0


def test_test_flops_scale_with_sampler_steps():
    geoms = [LayerGeom("a", "dense", 6, 6)]
    rep = train_flops(geoms, None, steps=1, ddim_steps=50)
    assert rep.test_flops_per_sample == 50 * rep.sparse_forward_flops


def test_frechet_identical_sets_is_zero():
    x = Rng(0).normal((300, 2))
    assert frechet_distance(x, x.copy()) < 1e-9


def test_frechet_mean_shift_closed_form():
    a = Rng(1).normal((500, 1))
    a = (a - a.mean()) / a.std(ddof=1)
    b = a + 3.0
    assert frechet_distance(a, b) == pytest.approx(9.0, abs=1e-9)


def test_frechet_variance_case():
    # N(0, I) against N(0, 4I) in two dimensions: 2 * (1 + 4 - 2*2) = 2.
    r = Rng(2)
    a = r.normal((100_000, 2))
    b = 2.0 * r.normal((100_000, 2))
    assert frechet_distance(a, b) == pytest.approx(2.0, rel=0.05)


def test_frechet_symmetry():
    r = Rng(3)
    a, b = r.normal((400, 3)), 1.5 * r.normal((400, 3)) + 0.3
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-9)


def test_frechet_flags_degenerate_covariance():
    line = np.linspace(0.0, 1.0, 50)[:, None] * np.array([[1.0, 2.0]])
    blob = Rng(4).normal((50, 2))
    rep = quality_report(line, blob, kid_block_size=50)
    assert rep.covariance_jitter is True
    assert np.isfinite(rep.frechet)
    rep2 = quality_report(blob, 2.0 * Rng(5).normal((50, 2)), kid_block_size=50)
    assert rep2.covariance_jitter is False


def test_frechet_sample_count_precondition():
    with pytest.raises(ValueError):
        frechet_distance(np.zeros((2, 2)), np.zeros((10, 2)))
    with pytest.raises(ShapeError):
        frechet_distance(np.zeros((10, 2)), np.zeros((10, 3)))


def brute_mmd2(x, y):
    d = x.shape[1]
    k = lambda u, v: (float(u @ v) / d + 1.0) ** 3
    m, n = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j)
    syy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j)
    sxy = sum(k(x[i], y[j]) for i in range(m) for j in range(n))
    return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * sxy / (m * n)


def test_kid_matches_brute_force_double_sum():
    r = Rng(6)
    x, y = r.normal((20, 3)), r.normal((20, 3)) + 0.5
    assert kid_mmd(x, y, block_size=20) == pytest.approx(brute_mmd2(x, y), rel=1e-12)


def test_kid_identical_multisets_match_oracle():
    x = Rng(7).normal((20, 2))
    assert kid_mmd(x, x.copy(), block_size=20) == pytest.approx(brute_mmd2(x, x), rel=1e-12)


def test_kid_separated_point_masses():
    a = np.zeros((10, 1))
    b = np.full((10, 1), 10.0)
    val = kid_mmd(a, b, block_size=10)
    assert val == pytest.approx(brute_mmd2(a, b), rel=1e-12)
    assert val == pytest.approx(1.0 + 101.0**3 - 2.0, rel=1e-12)


def test_kid_null_within_three_standard_errors():
    r = Rng(8)
    a, b = r.normal((1000, 2)), r.normal((1000, 2))
    blocks = kid_blocks(a, b, block_size=100)
    assert len(blocks) == 10
    se = blocks.std(ddof=1) / np.sqrt(len(blocks))
    assert abs(blocks.mean()) < 3.0 * se


def test_kid_unbiased_over_repeated_trials():
    vals = []
    for trial in range(100):
        r = Rng(100 + trial)
        vals.append(kid_mmd(r.normal((50, 2)), r.normal((50, 2)), block_size=50))
    vals = np.asarray(vals)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean()) < 3.0 * se


def test_kid_block_splitting_is_deterministic():
    r = Rng(9)
    a, b = r.normal((250, 2)), r.normal((250, 2))
    np.testing.assert_array_equal(kid_blocks(a, b, 100), kid_blocks(a, b, 100))
    # 250 samples at block 100 -> 2 full blocks, remainder dropped
    assert len(kid_blocks(a, b, 100)) == 2


def test_quality_report_fields():
    r = Rng(10)
    rep = quality_report(r.normal((200, 2)), r.normal((300, 2)), kid_block_size=100)
    assert rep.frechet >= 0.0
    assert rep.n_samples == 200
    assert rep.n_reference == 300
    assert rep.feature_space == "raw-coordinates"
    assert rep.kid_block_size == 100

import numpy as np
import pytest
from scipy.stats import chisquare

from davnav.gridmap import GridMap
from davnav.scenario import (AUGMENT_KINDS, ScenarioConfig, apply_spec_augment,
                             plan_episode, plan_step)

POOL = [f"sound_{i:03d}" for i in range(8)]
TARGET = "sound_002"


def small_map(free_cells=30):
    # single free row segment of the requested size
    w = free_cells + 2
    occ = np.ones((3, w), dtype=bool)
    occ[1, 1:w - 1] = False
    return GridMap(width=w, height=3, resolution=0.5, occupancy=occ)


def complex_config(**kw):
    return ScenarioConfig(complex_enabled=True, **kw)


def test_clean_plan_is_empty():
    rng = np.random.default_rng(0)
    plan = plan_episode(rng, ScenarioConfig(complex_enabled=False), TARGET, POOL)
    assert plan.second_sound_id is None
    assert not plan.distractor_enabled


def test_plan_episode_fractions_and_exclusion():
    rng = np.random.default_rng(42)
    config = complex_config()
    n = 10_000
    with_distractor = 0
    with_second = 0
    for _ in range(n):
        plan = plan_episode(rng, config, TARGET, POOL)
        with_distractor += plan.distractor_enabled
        if plan.second_sound_id is not None:
            with_second += 1
            assert plan.second_sound_id != TARGET
            assert plan.second_sound_id in POOL
    assert abs(with_distractor / n - 0.5) <= 0.015
    assert abs(with_second / n - 0.5) <= 0.015


def test_plan_episode_needs_two_sounds():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        plan_episode(rng, complex_config(), TARGET, [TARGET])


def test_plan_step_inactive_when_episode_has_no_distractor():
    rng = np.random.default_rng(1)
    config = complex_config()
    plan = plan_episode(rng, config, TARGET, POOL)
    while plan.distractor_enabled:
        plan = plan_episode(rng, config, TARGET, POOL)
    grid = small_map()
    for _ in range(200):
        ev = plan_step(rng, config, plan, TARGET, POOL, grid)
        assert not ev.distractor_active


def test_plan_step_fractions():
    rng = np.random.default_rng(7)
    config = complex_config()
    grid = small_map()
    plan = plan_episode(rng, config, TARGET, POOL)
    while not plan.distractor_enabled:
        plan = plan_episode(rng, config, TARGET, POOL)
    n = 12_000
    active = 0
    aug_counts = dict.fromkeys(AUGMENT_KINDS, 0)
    for _ in range(n):
        ev = plan_step(rng, config, plan, TARGET, POOL, grid)
        active += ev.distractor_active
        aug_counts[ev.augmentation] += 1
        if ev.distractor_active:
            assert ev.distractor_id != TARGET
            assert grid.is_free(ev.distractor_cell)
    assert abs(active / n - 0.5) <= 0.015
    # two nested coin flips: none 1/2, each mask kind 1/6
    assert abs(aug_counts["none"] / n - 1 / 2) <= 0.015
    for kind in ("time_mask", "freq_mask", "both"):
        assert abs(aug_counts[kind] / n - 1 / 6) <= 0.015


def test_distractor_cell_uniform_chi_square():
    rng = np.random.default_rng(11)
    config = complex_config(p_distractor_step=1.0)
    grid = small_map(free_cells=30)
    plan = plan_episode(rng, config, TARGET, POOL)
    while not plan.distractor_enabled:
        plan = plan_episode(rng, config, TARGET, POOL)
    counts = {}
    n = 50_000
    for _ in range(n):
        ev = plan_step(rng, config, plan, TARGET, POOL, grid)
        counts[ev.distractor_cell] = counts.get(ev.distractor_cell, 0) + 1
    free = grid.free_cells()
    assert set(counts) == set(free)
    observed = [counts[c] for c in free]
    assert chisquare(observed).pvalue > 0.01


def test_no_leak_outside_pool():
    rng = np.random.default_rng(3)
    config = complex_config()
    grid = small_map()
    held_out = {"val_sound", "test_sound"}
    for _ in range(2000):
        plan = plan_episode(rng, config, TARGET, POOL)
        ev = plan_step(rng, config, plan, TARGET, POOL, grid)
        assert plan.second_sound_id not in held_out
        assert ev.distractor_id not in held_out


def test_augment_none_and_zero_width_identity():
    rng = np.random.default_rng(5)
    spec = np.abs(np.random.default_rng(0).standard_normal((65, 26, 2)))
    assert np.array_equal(apply_spec_augment(spec, "none", rng,
                                             complex_config()), spec)
    cfg = complex_config(time_mask_param=0)
    assert np.array_equal(apply_spec_augment(spec, "time_mask", rng, cfg), spec)


def test_time_mask_is_one_contiguous_run():
    cfg = complex_config(time_mask_param=12)
    base = np.full((65, 26, 2), 0.7)
    rng = np.random.default_rng(17)
    seen_nonzero_width = False
    for _ in range(100):
        out = apply_spec_augment(base, "time_mask", rng, cfg)
        zero_cols = np.nonzero((out == 0).all(axis=(0, 2)))[0]
        assert len(zero_cols) <= 12
        if len(zero_cols):
            seen_nonzero_width = True
            assert np.array_equal(zero_cols,
                                  np.arange(zero_cols[0], zero_cols[-1] + 1))
            # both channels masked
            assert np.all(out[:, zero_cols, :] == 0)
        assert out.shape == base.shape
        assert np.all(out >= 0)
    assert seen_nonzero_width


def test_augment_deterministic_under_seed():
    cfg = complex_config(time_mask_param=12, freq_mask_param=12)
    spec = np.abs(np.random.default_rng(2).standard_normal((65, 26, 2)))
    a = apply_spec_augment(spec, "both", np.random.default_rng(123), cfg)
    b = apply_spec_augment(spec, "both", np.random.default_rng(123), cfg)
    assert np.array_equal(a, b)


def test_mask_param_exceeding_axis_rejected():
    cfg = complex_config(time_mask_param=32)  # 16 kHz spectrogram has 26 frames
    spec = np.zeros((65, 26, 2))
    with pytest.raises(ValueError):
        apply_spec_augment(spec, "time_mask", np.random.default_rng(0), cfg)

"""Complex-audio randomization: episode and step perturbations plus masking.

Three elements compose the complex scenarios. A second sound may be overlaid
at the target's own position for the whole episode. A distractor sound may be
enabled for the episode and is then re-rolled every step: audible or not, a
fresh sound, a fresh uniformly random traversable cell. Each step one of
(none, time mask, frequency mask, both) is applied to the spectrogram. The
category distribution is (1/2, 1/6, 1/6, 1/6), a coin flip followed by a
uniform three-way choice; the prose list reads as uniform-over-4 but the
control flow is two nested draws.

All sound draws come from a caller-supplied pool (the training split during
training; the test split when evaluating on unheard sounds so disturbances
are unheard too) and always exclude the current target sound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridmap import Cell, GridMap

AUGMENT_KINDS = ("none", "time_mask", "freq_mask", "both")


@dataclass(frozen=True)
class ScenarioConfig:
    complex_enabled: bool = False
    p_second_sound: float = 0.5
    p_distractor_episode: float = 0.5
    p_distractor_step: float = 0.5
    time_mask_param: int = 12
    freq_mask_param: int = 12

    def __post_init__(self):
        for p in (self.p_second_sound, self.p_distractor_episode, self.p_distractor_step):
            if not (0.0 <= p <= 1.0):
                raise ValueError("probabilities must be in [0, 1]")
        if self.time_mask_param < 0 or self.freq_mask_param < 0:
            raise ValueError("mask params must be >= 0")

    @classmethod
    def for_sample_rate(cls, sample_rate: int, complex_enabled: bool = True) -> "ScenarioConfig":
        """Published mask widths: time 32 at 44.1 kHz, 12 at 16 kHz; freq 12."""
        return cls(complex_enabled=complex_enabled,
                   time_mask_param=32 if sample_rate == 44100 else 12,
                   freq_mask_param=12)


@dataclass(frozen=True)
class EpisodeAudioPlan:
    second_sound_id: str | None
    distractor_enabled: bool


@dataclass(frozen=True)
class StepAudioEvents:
    distractor_active: bool
    distractor_id: str | None
    distractor_cell: Cell | None
    augmentation: str

    def __post_init__(self):
        if self.distractor_active != (self.distractor_id is not None):
            raise ValueError("distractor fields must be present iff active")
        if self.distractor_active != (self.distractor_cell is not None):
            raise ValueError("distractor fields must be present iff active")
        if self.augmentation not in AUGMENT_KINDS:
            raise ValueError(f"bad augmentation {self.augmentation!r}")


CLEAN_STEP = StepAudioEvents(distractor_active=False, distractor_id=None,
                             distractor_cell=None, augmentation="none")


def plan_episode(rng: np.random.Generator, config: ScenarioConfig,
                 target_id: str, pool_ids: list[str]) -> EpisodeAudioPlan:
    """Episode-level draws: second sound on/off (and which), distractor on/off.

    The second sound is uniform over the pool excluding the target. Clean
    scenarios consume no randomness.
    """
    if not config.complex_enabled:
        return EpisodeAudioPlan(second_sound_id=None, distractor_enabled=False)
    eligible = [s for s in pool_ids if s != target_id]
    if not eligible:
        raise ValueError("complex scenarios need at least 2 sounds in the pool")
    second = None
    if rng.random() < config.p_second_sound:
        second = eligible[rng.integers(len(eligible))]
    distractor = rng.random() < config.p_distractor_episode
    return EpisodeAudioPlan(second_sound_id=second, distractor_enabled=distractor)


def plan_step(rng: np.random.Generator, config: ScenarioConfig,
              plan: EpisodeAudioPlan, target_id: str, pool_ids: list[str],
              grid: GridMap) -> StepAudioEvents:
    """Step-level draws, in fixed order: distractor audibility, sound, cell,
    then augmentation coin and category."""
    if not config.complex_enabled:
        return CLEAN_STEP
    active = False
    d_id = None
    d_cell = None
    if plan.distractor_enabled and rng.random() < config.p_distractor_step:
        eligible = [s for s in pool_ids if s != target_id]
        if not eligible:
            raise ValueError("complex scenarios need at least 2 sounds in the pool")
        active = True
        d_id = eligible[rng.integers(len(eligible))]
        free = grid.free_cells()
        d_cell = free[rng.integers(len(free))]
    if rng.random() < 0.5:
        aug = AUGMENT_KINDS[1 + rng.integers(3)]
    else:
        aug = "none"
    return StepAudioEvents(distractor_active=active, distractor_id=d_id,
                           distractor_cell=d_cell, augmentation=aug)


def draw_mask_plan(rng: np.random.Generator, kind: str, config: ScenarioConfig,
                   shape: tuple[int, ...]) -> list[tuple[int, int, int]]:
    """Draw the (axis, start, width) mask placements for an augmentation kind.

    Drawing is separated from application so the episode RNG advances
    identically whether or not the spectrogram is actually materialized
    (the engine's no-audio fast path must stay replay-compatible). Widths
    are uniform on [0, param] and starts uniform on [0, axis - width].
    """
    if kind not in AUGMENT_KINDS:
        raise ValueError(f"bad augmentation {kind!r}")
    plan = []
    axes_params = []
    if kind in ("time_mask", "both"):
        axes_params.append((1, config.time_mask_param))
    if kind in ("freq_mask", "both"):
        axes_params.append((0, config.freq_mask_param))
    for axis, param in axes_params:
        size = shape[axis]
        if param > size:
            raise ValueError(f"mask param {param} exceeds axis length {size}")
        width = int(rng.integers(0, param + 1))
        start = int(rng.integers(0, size - width + 1))
        plan.append((axis, start, width))
    return plan


def apply_mask_plan(spec: np.ndarray, plan: list[tuple[int, int, int]]) -> np.ndarray:
    out = spec.copy()
    for axis, start, width in plan:
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(start, start + width)
        out[tuple(sl)] = 0.0
    return out


def apply_spec_augment(spec: np.ndarray, kind: str, rng: np.random.Generator,
                       config: ScenarioConfig) -> np.ndarray:
    """SpecAugment-style masking on a [freq, time, 2] log spectrogram.

    Time masking zeroes a contiguous run of up to time_mask_param frames
    across both channels; frequency masking likewise on rows; "both" applies
    time then frequency. Masking happens after the log, and the fill value 0
    is the silent level under log(1 + x). Returns a new array.
    """
    return apply_mask_plan(spec, draw_mask_plan(rng, kind, config, spec.shape))

"""Self-contained source-audio library with the 73/11/18 split protocol.

The benchmark's audio corpus is procedural: a seeded family of distinguishable
mono signals (tones, chirps, band-limited noise, AM tones), peak-normalized so
loudness is controlled exclusively by the renderer's distance gain. Real WAV
corpora can be imported; files must be PCM 16-bit mono at the bank's rate.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

SUPPORTED_RATES = (16000, 44100)
SPLITS = ("train", "val", "test")
# Published corpus split of 102 sounds; smaller banks scale proportionally.
SPLIT_WEIGHTS = (73, 11, 18)


@dataclass(frozen=True, eq=False)
class SoundAsset:
    id: str
    samples: np.ndarray
    sample_rate: int
    split: str

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a non-empty mono array")
        if np.max(np.abs(s)) > 1.0 + 1e-12:
            raise ValueError("samples must lie in [-1, 1]")
        if self.split not in SPLITS:
            raise ValueError(f"bad split {self.split!r}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def split_sizes(count: int) -> tuple[int, int, int]:
    """Proportional 73/11/18 split: round val and test, remainder to train.

    split_sizes(102) == (73, 11, 18); split_sizes(10) == (7, 1, 2).
    """
    total = sum(SPLIT_WEIGHTS)
    val = round(count * SPLIT_WEIGHTS[1] / total)
    test = round(count * SPLIT_WEIGHTS[2] / total)
    train = count - val - test
    if train < 1:
        raise ValueError(f"count={count} leaves no training sounds")
    return train, val, test


class SoundBank:
    """Immutable id -> SoundAsset mapping with split bookkeeping."""

    def __init__(self, assets: list[SoundAsset], sample_rate: int):
        if sample_rate not in SUPPORTED_RATES:
            raise ValueError(f"unsupported sample rate {sample_rate}")
        for a in assets:
            if a.sample_rate != sample_rate:
                raise ValueError(f"asset {a.id} rate {a.sample_rate} != bank rate {sample_rate}")
        self.sample_rate = sample_rate
        self._assets = {a.id: a for a in assets}
        if len(self._assets) != len(assets):
            raise ValueError("duplicate asset ids")

    def __len__(self):
        return len(self._assets)

    def __contains__(self, sound_id: str):
        return sound_id in self._assets

    def get(self, sound_id: str) -> SoundAsset:
        return self._assets[sound_id]

    def ids(self, split: str | None = None) -> list[str]:
        if split is None:
            return list(self._assets)
        return [a.id for a in self._assets.values() if a.split == split]

    @property
    def split(self) -> dict[str, list[str]]:
        return {s: self.ids(s) for s in SPLITS}


def _synth_signal(kind: int, rng: np.random.Generator, t: np.ndarray, rate: int) -> np.ndarray:
    if kind == 0:  # pure tone
        f = rng.uniform(200.0, min(4000.0, rate / 4))
        x = np.sin(2 * np.pi * f * t)
    elif kind == 1:  # linear chirp
        f0 = rng.uniform(100.0, 800.0)
        f1 = rng.uniform(1000.0, min(6000.0, rate / 3))
        x = np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / t[-1] * t ** 2))
    elif kind == 2:  # band-limited noise (moving-average smoothed)
        x = rng.standard_normal(t.size)
        k = int(rng.integers(3, 12))
        x = np.convolve(x, np.ones(k) / k, mode="same")
    else:  # amplitude-modulated tone
        f = rng.uniform(300.0, min(3000.0, rate / 4))
        fm = rng.uniform(1.0, 8.0)
        x = (0.6 + 0.4 * np.sin(2 * np.pi * fm * t)) * np.sin(2 * np.pi * f * t)
    return x


def synthesize_bank(seed: int, count: int, sample_rate: int = 16000,
                    duration: float = 2.0) -> SoundBank:
    """Deterministic bank of ``count`` synthetic sounds.

    Ids are ``sound_000`` ... in order; splits are assigned by index
    (train block, then val, then test) so membership is a function of the
    id alone and survives reseeding.
    """
    if sample_rate not in SUPPORTED_RATES:
        raise ValueError(f"unsupported sample rate {sample_rate}")
    if count < 3:
        raise ValueError("need at least 3 sounds")
    if duration < 1.0:
        raise ValueError("assets must be at least 1 s long")
    n_train, n_val, n_test = split_sizes(count)
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    assets = []
    for i in range(count):
        x = _synth_signal(i % 4, rng, t, sample_rate)
        x = 0.95 * x / np.max(np.abs(x))
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        assets.append(SoundAsset(id=f"sound_{i:03d}", samples=x,
                                 sample_rate=sample_rate, split=split))
    return SoundBank(assets, sample_rate)


# ---------------------------------------------------------------------------
# WAV import/export (PCM 16-bit mono) and the split manifest
# ---------------------------------------------------------------------------


def save_wav(asset: SoundAsset, path) -> None:
    data = np.clip(np.round(asset.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(asset.sample_rate)
        w.writeframes(data.tobytes())


def load_wav(path, expected_rate: int, sound_id: str | None = None,
             split: str = "train") -> SoundAsset:
    """Load a PCM 16-bit mono WAV; errors on stereo, rate mismatch, or a
    truncated payload."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise ValueError("mono required")
        if w.getframerate() != expected_rate:
            raise ValueError(f"rate mismatch: file {w.getframerate()} Hz, bank {expected_rate} Hz")
        if w.getsampwidth() != 2:
            raise ValueError("PCM 16-bit required")
        n = w.getnframes()
        raw = w.readframes(n)
        if len(raw) != 2 * n:
            raise ValueError("truncated file")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    samples = np.clip(samples, -1.0, 1.0)
    name = sound_id if sound_id is not None else str(path)
    return SoundAsset(id=name, samples=samples, sample_rate=expected_rate, split=split)


def save_split_manifest(bank: SoundBank, path) -> None:
    lines = [f"{sid} {bank.get(sid).split}" for sid in bank.ids()]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_split_manifest(path) -> dict[str, str]:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            sid, split = line.split()
            if split not in SPLITS:
                raise ValueError(f"bad split {split!r} for {sid}")
            out[sid] = split
    return out


def step_slice(asset: SoundAsset, step_index: int) -> np.ndarray:
    """Exactly one second of audio for an env step, looping cyclically.

    Returns samples [step*R, (step+1)*R) of the asset modulo its length.
    """
    r = asset.sample_rate
    idx = (np.arange(r) + step_index * r) % asset.samples.size
    return asset.samples[idx]

"""Parametric binaural rendering and the spectrogram pipeline.

Sound propagates geodesically: the direction of arrival at the agent is the
first segment of a shortest obstacle-respecting path to the source, and
loudness falls off with geodesic (not Euclidean) distance. The renderer is
a parametric stand-in for measured room impulse responses; its contract is
the set of symmetries a navigation policy can exploit (distance gain,
left/right mirror, rear attenuation, interaural delay).

Azimuths are radians in (-pi, pi], positive to the agent's left. On a grid
with 4-way headings the only reachable values are {0, +-pi/2, pi}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .gridmap import (HEADING_VECTORS, AgentPose, Cell, GridMap,
                      shortest_cell_path)

SPECTROGRAM_SHAPES = {16000: (65, 26, 2), 44100: (65, 69, 2)}

STFT_WINDOW = 512
STFT_HOP = 160
DOWNSAMPLE = 4


@dataclass(frozen=True, eq=False)
class BinauralFrame:
    """One second of two-channel audio."""

    left: np.ndarray
    right: np.ndarray
    sample_rate: int

    def __post_init__(self):
        l = np.asarray(self.left, dtype=np.float64)
        r = np.asarray(self.right, dtype=np.float64)
        if l.shape != r.shape or l.ndim != 1:
            raise ValueError("left/right must be 1-D arrays of equal length")
        if not (np.isfinite(l).all() and np.isfinite(r).all()):
            raise ValueError("non-finite samples")
        object.__setattr__(self, "left", l)
        object.__setattr__(self, "right", r)

    @classmethod
    def silence(cls, sample_rate: int) -> "BinauralFrame":
        z = np.zeros(sample_rate)
        return cls(left=z, right=z.copy(), sample_rate=sample_rate)


@dataclass(frozen=True)
class DecayTail:
    enabled: bool = False
    tail_gain: float = 0.3
    tail_time_constant: float = 0.05  # seconds


@dataclass(frozen=True)
class AcousticParams:
    reference_gain: float = 1.0
    min_distance: float = 0.25  # meters; gain saturates below this
    rear_attenuation: float = 0.6
    itd_max: float = 0.0007  # seconds; ~0.7 ms is a human-scale interaural delay
    decay_tail: DecayTail = field(default_factory=DecayTail)

    def __post_init__(self):
        if min(self.reference_gain, self.min_distance, self.itd_max) <= 0:
            raise ValueError("gain, min_distance and itd_max must be positive")
        if not (0 < self.rear_attenuation <= 1):
            raise ValueError("rear_attenuation must be in (0, 1]")


def doa_and_distance(grid: GridMap, pose: AgentPose, source: Cell) -> tuple[float, float]:
    """Azimuth and geodesic distance of a source as heard at ``pose``.

    The azimuth is the angle of the first cell-to-cell segment of one
    shortest path from the agent to the source, relative to the heading
    (positive = left), so sound bends around walls. A source in the agent's
    cell is (0, 0).
    """
    if pose.cell == source:
        return 0.0, 0.0
    path = shortest_cell_path(grid, pose.cell, source, initial_heading=pose.heading)
    dist = (len(path) - 1) * grid.resolution
    dr = path[1][0] - path[0][0]
    dc = path[1][1] - path[0][1]
    seg_heading = HEADING_VECTORS.index((dr, dc))
    rel = (seg_heading - pose.heading) % 4  # 0 ahead, 1 right, 2 behind, 3 left
    theta = (0.0, -np.pi / 2, np.pi, np.pi / 2)[rel]
    return theta, dist


def render_source(x: np.ndarray, theta: float, distance: float,
                  params: AcousticParams, sample_rate: int) -> BinauralFrame:
    """Render a mono frame at azimuth ``theta`` and geodesic ``distance``.

    Gain is reference_gain / max(d, min_distance). Equal-power panning with
    phi = clamp(pi/4 - theta'/2, 0, pi/2), theta' = clamp(theta, -pi/2, pi/2):
    left = cos(phi) * g * x, right = sin(phi) * g * x, evaluated symmetrically
    in |theta| so that render(x, -theta) is exactly render(x, theta) with the
    ears swapped and theta = 0 drives both ears identically. Sources behind
    (|theta| > pi/2) are attenuated on both ears. The lagging ear is delayed
    by round(rate * itd_max * |sin theta'|) samples, zero-filled. The optional
    decay tail convolves each ear with delta + tail_gain * exp decay.
    """
    x = np.asarray(x, dtype=np.float64)
    g = params.reference_gain / max(distance, params.min_distance)
    # Gains are computed once for |theta| and mirrored by swapping ears, so
    # left/right symmetry holds sample-for-sample; dead center uses sqrt(1/2)
    # for both ears (cos and sin of pi/4 differ by one ulp).
    t = min(abs(theta), np.pi / 2)
    phi = np.pi / 4 - t / 2
    if t == 0.0:
        near = far = np.sqrt(0.5)
    else:
        near, far = np.cos(phi), np.sin(phi)
    if abs(theta) > np.pi / 2:
        near *= params.rear_attenuation
        far *= params.rear_attenuation
    if theta >= 0:
        left, right = near * g * x, far * g * x
    else:
        left, right = far * g * x, near * g * x

    lag = int(round(sample_rate * params.itd_max * np.sin(t)))
    if lag > 0:
        if theta >= 0:  # source left: right ear lags
            right = _delay(right, lag)
        else:
            left = _delay(left, lag)

    if params.decay_tail.enabled:
        tail = params.decay_tail
        n = int(round(3 * tail.tail_time_constant * sample_rate))
        h = tail.tail_gain * np.exp(-np.arange(n + 1) / (tail.tail_time_constant * sample_rate))
        h[0] += 1.0  # the direct-path delta
        left = fftconvolve(left, h)[: x.size]
        right = fftconvolve(right, h)[: x.size]

    return BinauralFrame(left=left, right=right, sample_rate=sample_rate)


def _delay(x: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(x)
    out[k:] = x[: x.size - k]
    return out


def mix(frames: list[BinauralFrame]) -> BinauralFrame:
    """Elementwise sum per ear; no clipping."""
    if not frames:
        raise ValueError("nothing to mix")
    rate = frames[0].sample_rate
    n = frames[0].left.size
    for f in frames[1:]:
        if f.sample_rate != rate:
            raise ValueError("sample-rate mismatch in mix")
        if f.left.size != n:
            raise ValueError("frame-length mismatch in mix")
    left = np.sum([f.left for f in frames], axis=0)
    right = np.sum([f.right for f in frames], axis=0)
    return BinauralFrame(left=left, right=right, sample_rate=rate)


def _stft_magnitude(x: np.ndarray) -> np.ndarray:
    """Magnitude STFT, centered: reflect-pad 256 each side, Hann 512, hop 160.

    A 1 s signal yields 1 + floor(rate/160) frames and 257 frequency bins.
    """
    pad = STFT_WINDOW // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (xp.size - STFT_WINDOW) // STFT_HOP
    idx = np.arange(STFT_WINDOW)[None, :] + STFT_HOP * np.arange(n_frames)[:, None]
    frames = xp[idx] * np.hanning(STFT_WINDOW)
    return np.abs(np.fft.rfft(frames, axis=1)).T  # [257, n_frames]


def compute_spectrogram(frame: BinauralFrame, downsample: str = "stride") -> np.ndarray:
    """Two-channel log-magnitude spectrogram of a 1 s binaural frame.

    Per ear: centered magnitude STFT (window 512, hop 160), downsample both
    axes by four starting at index 0, then log(1 + x). Channels are stacked
    last: shape (65, 26, 2) at 16 kHz and (65, 69, 2) at 44.1 kHz. All
    entries are >= 0 and an all-zero frame maps to exactly 0.

    ``downsample`` selects the axis reduction: "stride" keeps every 4th
    bin/frame (the default; reproduces the published shapes), "average"
    mean-pools 4-wide blocks instead.
    """
    if frame.left.size != frame.sample_rate:
        raise ValueError(f"frame must contain exactly 1 s of audio "
                         f"({frame.sample_rate} samples, got {frame.left.size})")
    ears = []
    for x in (frame.left, frame.right):
        mag = _stft_magnitude(x)
        if downsample == "stride":
            mag = mag[::DOWNSAMPLE, ::DOWNSAMPLE]
        elif downsample == "average":
            fb, tb = mag.shape
            fpad = (-fb) % DOWNSAMPLE
            tpad = (-tb) % DOWNSAMPLE
            mag = np.pad(mag, ((0, fpad), (0, tpad)), mode="edge")
            mag = mag.reshape(mag.shape[0] // DOWNSAMPLE, DOWNSAMPLE,
                              mag.shape[1] // DOWNSAMPLE, DOWNSAMPLE).mean(axis=(1, 3))
        else:
            raise ValueError(f"unknown downsample mode {downsample!r}")
        ears.append(np.log1p(mag))
    spec = np.stack(ears, axis=-1)
    expected = SPECTROGRAM_SHAPES.get(frame.sample_rate)
    if expected is not None and spec.shape != expected:
        raise AssertionError(f"spectrogram shape {spec.shape} != {expected}")
    return spec

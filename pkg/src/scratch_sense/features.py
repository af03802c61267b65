"""Time-frequency features: STFT, mel filterbank, spectrograms, transforms.

The classifier input is a 100-band log-power mel spectrogram. With the STFT
settings below, a 0.75 s clip at 44.1 kHz maps to exactly 65 frames and the
longest accepted gesture (1.5 s) to 130, so every spectrogram entering the
model has between 65 and 130 columns before the window transform.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .audio_core import AudioClip, TARGET_SAMPLE_RATE
from .errors import EmptyAudio, InvalidParams, WrongShape

MEL_BANDS = 100
FFT_SIZE = 2048
HOP = 508
F_MIN = 0.0
F_MAX = 22_050.0
POWER_FLOOR = 1e-10
FLOOR_DB = -100.0  # 10*log10(POWER_FLOOR)

#: Column counts produced by the three time-axis rescale modes: the minimum,
#: midpoint, and maximum of the gesture-length range.
SCALE_COLUMNS = {"small": 65, "medium": 98, "large": 130}
CROP_COLUMNS = 65
PAD_COLUMNS = 130


class WindowTransform(Enum):
    """How a variable-width spectrogram is forced to a fixed width."""

    CROP = "crop"
    PAD = "pad"
    SCALE_SMALL = "scale_small"
    SCALE_MEDIUM = "scale_medium"
    SCALE_LARGE = "scale_large"

    @property
    def output_columns(self) -> int:
        return {
            WindowTransform.CROP: CROP_COLUMNS,
            WindowTransform.PAD: PAD_COLUMNS,
            WindowTransform.SCALE_SMALL: SCALE_COLUMNS["small"],
            WindowTransform.SCALE_MEDIUM: SCALE_COLUMNS["medium"],
            WindowTransform.SCALE_LARGE: SCALE_COLUMNS["large"],
        }[self]

    @classmethod
    def from_name(cls, name: str) -> "WindowTransform":
        try:
            return cls(name.lower().replace("-", "_"))
        except ValueError:
            raise InvalidParams(f"unknown window transform {name!r}") from None


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-power mel spectrogram: rows = mel bands (low to high), cols = frames."""

    values: np.ndarray
    floor_db: float = FLOOR_DB

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[0] != MEL_BANDS:
            raise WrongShape(f"expected ({MEL_BANDS}, T) matrix, got {values.shape}")
        if values.shape[1] < 1:
            raise WrongShape("spectrogram must have at least one column")
        if not np.all(np.isfinite(values)):
            raise WrongShape("spectrogram values must be finite")
        if np.any(values < self.floor_db - 1e-9):
            raise WrongShape("spectrogram values below floor_db")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


class FeatureKind(Enum):
    TIME_ENERGY = 65      # per-frame energy: column sums of a 100x65 spectrogram
    FREQUENCY_ENERGY = 100  # per-band energy: row sums


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    kind: FeatureKind

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (self.kind.value,):
            raise WrongShape(f"{self.kind.name} vector must have length {self.kind.value}")


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------

def hann_window(n: int) -> np.ndarray:
    """Periodic Hann taper of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def rectangular_window(n: int) -> np.ndarray:
    return np.ones(n)


def stft(clip: AudioClip, fft_size: int, hop: int, window: np.ndarray) -> np.ndarray:
    """Short-time Fourier transform with centred frames.

    The signal is reflection-padded by fft_size/2 at both ends, then split
    into tapered frames every `hop` samples, giving len//hop + 1 frames.
    Returns a complex (fft_size/2 + 1, frames) matrix.
    """
    if len(clip) == 0:
        raise EmptyAudio("cannot transform an empty clip")
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise InvalidParams("fft_size must be a power of two")
    if not 0 < hop <= fft_size:
        raise InvalidParams("hop must satisfy 0 < hop <= fft_size")
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (fft_size,):
        raise InvalidParams("window length must equal fft_size")

    pad = fft_size // 2
    x = np.pad(clip.samples, pad, mode="reflect")
    n_frames = (len(x) - fft_size) // hop + 1
    starts = np.arange(n_frames) * hop
    frames = x[starts[:, None] + np.arange(fft_size)[None, :]] * window[None, :]
    return np.fft.rfft(frames, axis=1).T


@functools.lru_cache(maxsize=8)
def _cached_filterbank(n_mels: int, fft_size: int, sample_rate_hz: int,
                       f_min: float, f_max: float) -> np.ndarray:
    fb = mel_filterbank(n_mels, fft_size, sample_rate_hz, f_min, f_max)
    fb.setflags(write=False)  # shared across callers; must stay immutable
    return fb


def hz_to_mel(f: float | np.ndarray) -> float | np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: float | np.ndarray) -> float | np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, fft_size: int, sample_rate_hz: int,
                   f_min: float, f_max: float) -> np.ndarray:
    """Triangular filters with centres equally spaced on the mel scale.

    Returns a non-negative (n_mels, fft_size/2 + 1) matrix whose rows are the
    filters ordered by increasing centre frequency.
    """
    if n_mels < 2:
        raise InvalidParams("n_mels must be at least 2")
    if not 0 <= f_min < f_max <= sample_rate_hz / 2:
        raise InvalidParams("need 0 <= f_min < f_max <= Nyquist")
    n_bins = fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * (sample_rate_hz / fft_size)
    hz_points = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, centre, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rise = (bin_hz - lo) / (centre - lo)
        fall = (hi - bin_hz) / (hi - centre)
        fb[i] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def power_to_db(power: np.ndarray, power_floor: float = POWER_FLOOR) -> np.ndarray:
    """10*log10 with the power floored at `power_floor` (so dB >= floor_db)."""
    return 10.0 * np.log10(np.maximum(power, power_floor))


def mel_spectrogram(clip: AudioClip) -> MelSpectrogram:
    """Full pipeline: STFT power -> 100 mel bands -> dB with a -100 dB floor.

    The trailing STFT frame is dropped so frame count is exactly len//HOP,
    which pins a 0.75 s clip to 65 columns and a 1.5 s clip to 130.
    """
    if clip.sample_rate_hz != TARGET_SAMPLE_RATE:
        raise InvalidParams(
            f"expected {TARGET_SAMPLE_RATE} Hz audio, got {clip.sample_rate_hz}; resample first"
        )
    spectrum = stft(clip, FFT_SIZE, HOP, hann_window(FFT_SIZE))
    power = spectrum.real**2 + spectrum.imag**2
    if power.shape[1] > 1:
        power = power[:, :-1]
    fb = _cached_filterbank(MEL_BANDS, FFT_SIZE, TARGET_SAMPLE_RATE, F_MIN, F_MAX)
    return MelSpectrogram(values=power_to_db(fb @ power))


# ---------------------------------------------------------------------------
# Baseline feature vectors
# ---------------------------------------------------------------------------

def time_energy_features(spec: MelSpectrogram) -> FeatureVector:
    """Sum each column over all 100 bands: 65 per-frame energy totals."""
    if spec.values.shape[1] != FeatureKind.TIME_ENERGY.value:
        raise WrongShape(
            f"time-energy features need 65 columns, got {spec.values.shape[1]}"
        )
    return FeatureVector(values=spec.values.sum(axis=0), kind=FeatureKind.TIME_ENERGY)


def freq_energy_features(spec: MelSpectrogram) -> FeatureVector:
    """Sum each row over all frames: 100 per-band energy totals."""
    return FeatureVector(values=spec.values.sum(axis=1), kind=FeatureKind.FREQUENCY_ENERGY)


# ---------------------------------------------------------------------------
# Window transforms
# ---------------------------------------------------------------------------

def window_transform(spec: MelSpectrogram, mode: WindowTransform) -> MelSpectrogram:
    """Force a 65-130 column spectrogram to the mode's fixed width.

    Crop keeps the centre 65 columns (extra column trimmed from the end on odd
    surpluses); Pad left-aligns the content and fills to 130 columns with the
    floor level; the Scale modes linearly resample the time axis.
    """
    width = spec.values.shape[1]
    if not 65 <= width <= 130:
        raise WrongShape(f"window transforms expect 65-130 columns, got {width}")

    if mode is WindowTransform.CROP:
        surplus = width - CROP_COLUMNS
        front = surplus // 2
        out = spec.values[:, front : front + CROP_COLUMNS]
    elif mode is WindowTransform.PAD:
        out = np.full((MEL_BANDS, PAD_COLUMNS), spec.floor_db)
        out[:, :width] = spec.values
    else:
        out = _resample_columns(spec.values, mode.output_columns)
    return MelSpectrogram(values=out.copy(), floor_db=spec.floor_db)


def _resample_columns(values: np.ndarray, target: int) -> np.ndarray:
    """Linear interpolation along the time axis, endpoints pinned."""
    width = values.shape[1]
    if width == target:
        return values
    pos = np.linspace(0.0, width - 1.0, target)
    left = np.floor(pos).astype(np.int64)
    right = np.minimum(left + 1, width - 1)
    frac = pos - left
    return values[:, left] * (1.0 - frac)[None, :] + values[:, right] * frac[None, :]


# ---------------------------------------------------------------------------
# PGM export (visual inspection)
# ---------------------------------------------------------------------------

def write_pgm(path: str | Path, spec: MelSpectrogram) -> None:
    """8-bit binary PGM; [floor_db, max] maps linearly onto [0, 255].

    The image is flipped so the lowest band sits at the bottom, the usual
    spectrogram orientation.
    """
    values = spec.values
    span = values.max() - spec.floor_db
    if span <= 0:
        pixels = np.zeros(values.shape, dtype=np.uint8)
    else:
        pixels = np.round((values - spec.floor_db) / span * 255.0).astype(np.uint8)
    pixels = pixels[::-1]
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())

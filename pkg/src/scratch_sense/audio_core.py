"""Raw gesture audio: WAV I/O, resampling, segmentation, cropping, manifests.

All operations are pure functions of their inputs; clips are immutable in
spirit (functions return new AudioClip instances and never modify samples
in place).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    ClipTooShort,
    EmptyAudio,
    InsufficientAudio,
    InvalidClass,
    MalformedContainer,
    UnsupportedEncoding,
)

TARGET_SAMPLE_RATE = 44_100
#: Classifier window: every gesture is cropped to this duration before featurizing.
WINDOW_SECONDS = 0.75
WINDOW_SAMPLES = 33_075  # round(0.75 * 44100)


class GestureClass(Enum):
    """The six gesture classes, ordered alphabetically; index() is the label id."""

    CIRCLE_SCRATCH = "circle_scratch"
    FINGERNAIL_TAP = "fingernail_tap"
    FINGERTIP_TAP = "fingertip_tap"
    SILENCE = "silence"
    VERTICAL_SCRATCH = "vertical_scratch"
    W_SCRATCH = "w_scratch"

    @property
    def index(self) -> int:
        return list(GestureClass).index(self)

    @classmethod
    def from_name(cls, name: str) -> "GestureClass":
        try:
            return cls(name)
        except ValueError:
            raise InvalidClass(f"unknown gesture class {name!r}") from None

    @classmethod
    def from_index(cls, idx: int) -> "GestureClass":
        classes = list(cls)
        if not 0 <= idx < len(classes):
            raise InvalidClass(f"class index {idx} outside [0, {len(classes)})")
        return classes[idx]


CLASS_NAMES: tuple[str, ...] = tuple(c.value for c in GestureClass)
NUM_CLASSES = len(CLASS_NAMES)


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with amplitudes in [-1, 1] and its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional (mono)")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class GestureRecord:
    """One labelled clip in a dataset manifest."""

    clip_path: str
    label: GestureClass
    subject_id: str
    device_name: str = ""

    def __post_init__(self) -> None:
        if not self.subject_id:
            raise ValueError("subject_id must be non-empty")


@dataclass
class DatasetManifest:
    """Ordered collection of gesture records plus the common sample rate."""

    records: list[GestureRecord] = field(default_factory=list)
    sample_rate_hz: int = TARGET_SAMPLE_RATE

    def __post_init__(self) -> None:
        paths = [r.clip_path for r in self.records]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest contains duplicate clip paths")

    @property
    def subjects(self) -> list[str]:
        """Distinct subject ids in first-appearance order."""
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.subject_id, None)
        return list(seen)

    def validate_for_training(self) -> None:
        """Require every gesture class to appear at least once."""
        present = {r.label for r in self.records}
        missing = [c.value for c in GestureClass if c not in present]
        if missing:
            raise ValueError(f"training manifest missing classes: {missing}")


# ---------------------------------------------------------------------------
# WAV container
# ---------------------------------------------------------------------------

_FMT_PCM = 1
_FMT_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


def read_wav(path: str | Path) -> AudioClip:
    """Read a RIFF/WAVE file into a mono AudioClip.

    Supports PCM 16-bit integers and 32-bit floats, 1 or 2 channels. Stereo is
    averaged to mono; integer samples are scaled by 1/32768.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedContainer(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if len(body) < chunk_size:
            raise MalformedContainer(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise MalformedContainer(f"{path}: missing fmt/data chunk")
    if len(fmt) < 16:
        raise MalformedContainer(f"{path}: fmt chunk too short")

    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format == _FMT_EXTENSIBLE and len(fmt) >= 26:
        (audio_format,) = struct.unpack_from("<H", fmt, 24)  # sub-format GUID prefix

    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels (want 1 or 2)")
    if audio_format == _FMT_PCM and bits == 16:
        values = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2").astype(np.float64)
        values /= 32768.0
    elif audio_format == _FMT_FLOAT and bits == 32:
        values = np.frombuffer(data[: len(data) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncoding(
            f"{path}: format tag {audio_format} at {bits} bits is not PCM16/float32"
        )

    if channels == 2:
        values = values[: len(values) // 2 * 2].reshape(-1, 2).mean(axis=1)
    if values.size == 0:
        raise EmptyAudio(f"{path}: no samples")
    return AudioClip(samples=values, sample_rate_hz=sample_rate)


def write_wav(path: str | Path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a mono WAV file, either 16-bit PCM or 32-bit float."""
    if len(clip) == 0:
        raise EmptyAudio("refusing to write an empty clip")
    if encoding == "pcm16":
        fmt_tag, bits = _FMT_PCM, 16
        scaled = np.clip(np.round(clip.samples * 32768.0), -32768, 32767)
        payload = scaled.astype("<i2").tobytes()
    elif encoding == "float32":
        fmt_tag, bits = _FMT_FLOAT, 32
        payload = clip.samples.astype("<f4").tobytes()
    else:
        raise UnsupportedEncoding(f"unknown encoding {encoding!r}")

    block_align = bits // 8
    byte_rate = clip.sample_rate_hz * block_align
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        fmt_tag,
        1,
        clip.sample_rate_hz,
        byte_rate,
        block_align,
        bits,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# Resampling / segmentation / cropping
# ---------------------------------------------------------------------------

_SINC_HALF_WIDTH = 32  # zero crossings per side of the interpolation kernel
_RESAMPLE_BLOCK = 65_536


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Band-limited resampling via a Hann-windowed sinc interpolator.

    Output length is round(len * target / source), so duration is preserved
    to within one sample period. When downsampling, the kernel cutoff drops
    to the target Nyquist to avoid aliasing.
    """
    if len(clip) == 0:
        raise EmptyAudio("cannot resample an empty clip")
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if target_hz == clip.sample_rate_hz:
        return AudioClip(samples=clip.samples.copy(), sample_rate_hz=target_hz)

    src = clip.samples
    ratio = target_hz / clip.sample_rate_hz
    out_len = max(1, round(len(src) * ratio))
    cutoff = min(1.0, ratio)  # fraction of the source Nyquist to keep
    half = int(math.ceil(_SINC_HALF_WIDTH / cutoff))

    padded = np.concatenate([np.zeros(half), src, np.zeros(half)])
    out = np.empty(out_len, dtype=np.float64)
    offsets = np.arange(-half, half + 1)

    for start in range(0, out_len, _RESAMPLE_BLOCK):
        stop = min(start + _RESAMPLE_BLOCK, out_len)
        pos = np.arange(start, stop, dtype=np.float64) / ratio
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        # taps: distance from the output position to each contributing sample
        dist = frac[:, None] - offsets[None, :]
        kernel = cutoff * np.sinc(cutoff * dist)
        window = 0.5 + 0.5 * np.cos(np.pi * dist / (half + 1))
        window[np.abs(dist) > half + 1] = 0.0
        taps = kernel * window
        rows = padded[(base[:, None] + half) + offsets[None, :]]
        out[start:stop] = np.einsum("ij,ij->i", rows, taps)

    return AudioClip(samples=np.clip(out, -1.0, 1.0), sample_rate_hz=target_hz)


def segment_fixed_period(clip: AudioClip, period_s: float, count: int) -> list[AudioClip]:
    """Cut `count` consecutive non-overlapping segments of `period_s` from t=0."""
    if period_s <= 0 or count <= 0:
        raise ValueError("period_s and count must be positive")
    seg_len = round(period_s * clip.sample_rate_hz)
    needed = seg_len * count
    if needed > len(clip):
        raise InsufficientAudio(
            f"need {needed} samples ({period_s * count:.3f} s), clip has {len(clip)}"
        )
    return [
        AudioClip(samples=clip.samples[i * seg_len : (i + 1) * seg_len].copy(),
                  sample_rate_hz=clip.sample_rate_hz)
        for i in range(count)
    ]


def crop_symmetric(clip: AudioClip, target_s: float) -> AudioClip:
    """Crop equal amounts from both ends down to `target_s`.

    On an odd number of surplus samples, the extra one is removed from the end.
    """
    if target_s <= 0:
        raise ValueError("target_s must be positive")
    target_len = round(target_s * clip.sample_rate_hz)
    surplus = len(clip) - target_len
    if surplus < 0:
        raise ClipTooShort(
            f"clip has {len(clip)} samples, target needs {target_len}"
        )
    front = surplus // 2
    return AudioClip(
        samples=clip.samples[front : front + target_len].copy(),
        sample_rate_hz=clip.sample_rate_hz,
    )


# ---------------------------------------------------------------------------
# Manifest I/O: one JSON object per line
# ---------------------------------------------------------------------------

def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    lines = []
    for r in manifest.records:
        lines.append(
            json.dumps(
                {
                    "path": r.clip_path,
                    "label": r.label.value,
                    "subject_id": r.subject_id,
                    "device_name": r.device_name,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path, sample_rate_hz: int = TARGET_SAMPLE_RATE) -> DatasetManifest:
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedContainer(f"{path}:{line_no}: bad manifest line: {exc}") from None
        records.append(
            GestureRecord(
                clip_path=obj["path"],
                label=GestureClass.from_name(obj["label"]),
                subject_id=obj["subject_id"],
                device_name=obj.get("device_name", ""),
            )
        )
    return DatasetManifest(records=records, sample_rate_hz=sample_rate_hz)

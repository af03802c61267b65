"""Deterministic synthetic gesture-audio generator.

The recipes are not meant to be acoustically faithful recordings of real
scratches; they are constructed so that the six classes differ in the same
time-frequency ways real gestures do (impulse vs. sustained noise, bright vs.
dull taps, one stroke vs. four, background-only), which is what the training
and evaluation experiments need to exercise.

Each synthetic subject carries a persistent acoustic signature: a background
noise colour/level and a "surface response" (spectral tilt, resonance,
brightness shift) applied to the gestures themselves. Splitting by subject
therefore withholds whole acoustic environments from training, which is what
makes the calibration experiment observable on synthetic data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_core import (
    AudioClip,
    DatasetManifest,
    GestureClass,
    GestureRecord,
    TARGET_SAMPLE_RATE,
    write_manifest,
    write_wav,
)
from .errors import InvalidClass, IoFailure

MIN_DURATION_S = 0.75
MAX_DURATION_S = 1.5

_DEVICE_NAMES = ("handset_a", "handset_b", "tablet_a", "tablet_b")


@dataclass(frozen=True)
class SubjectProfile:
    """Per-subject acoustic signature (surface + environment + habits)."""

    subject_id: str
    noise_tilt_db_per_octave: float
    resonance_hz: float
    resonance_gain_db: float
    noise_offset_db: float
    brightness_octaves: float  # shifts every gesture band centre
    gesture_gain_db: float


NEUTRAL_PROFILE = SubjectProfile(
    subject_id="neutral",
    noise_tilt_db_per_octave=0.0,
    resonance_hz=1000.0,
    resonance_gain_db=0.0,
    noise_offset_db=0.0,
    brightness_octaves=0.0,
    gesture_gain_db=0.0,
)


def subject_profile(index: int, base_seed: int) -> SubjectProfile:
    rng = np.random.default_rng([base_seed, 7_001, index])
    return SubjectProfile(
        subject_id=f"s{index:02d}",
        noise_tilt_db_per_octave=rng.uniform(-4.0, 4.0),
        resonance_hz=float(np.exp(rng.uniform(np.log(400.0), np.log(6000.0)))),
        resonance_gain_db=rng.uniform(6.0, 14.0),
        noise_offset_db=rng.uniform(-6.0, 6.0),
        brightness_octaves=rng.uniform(-0.45, 0.45),
        gesture_gain_db=rng.uniform(-4.0, 4.0),
    )


@dataclass(frozen=True)
class SynthSpec:
    """Everything that determines a synthetic dataset, bit for bit."""

    seed: int
    clips_per_class: int
    subjects: int
    noise_db: float = -40.0
    sample_rate_hz: int = TARGET_SAMPLE_RATE

    def __post_init__(self) -> None:
        if self.clips_per_class < 1 or self.subjects < 1:
            raise ValueError("clips_per_class and subjects must be positive")


# ---------------------------------------------------------------------------
# Signal building blocks
# ---------------------------------------------------------------------------

def _shape_spectrum(signal: np.ndarray, sr: int, gain_db_of_f) -> np.ndarray:
    """Multiply the spectrum by 10^(gain_db(f)/20) and transform back."""
    spectrum = np.fft.rfft(signal)
    freqs = np.maximum(np.fft.rfftfreq(len(signal), 1.0 / sr), 20.0)
    spectrum *= 10.0 ** (gain_db_of_f(freqs) / 20.0)
    return np.fft.irfft(spectrum, n=len(signal))


def _band_noise(rng: np.random.Generator, n: int, sr: int, centre_hz: float,
                width_octaves: float) -> np.ndarray:
    """Unit-peak noise with a log-Gaussian band shape around centre_hz."""
    raw = rng.standard_normal(n)
    shaped = _shape_spectrum(raw, sr, lambda f: -6.0 * (np.log2(f / centre_hz) / width_octaves) ** 2)
    peak = np.max(np.abs(shaped))
    return shaped / peak if peak > 0 else shaped


def _surface_gain_db(profile: SubjectProfile):
    def gain(f: np.ndarray) -> np.ndarray:
        tilt = profile.noise_tilt_db_per_octave * np.log2(f / 1000.0)
        bump = profile.resonance_gain_db * np.exp(
            -0.5 * (np.log2(f / profile.resonance_hz) / 0.4) ** 2
        )
        return tilt + bump
    return gain


def _background(rng: np.random.Generator, n: int, sr: int, profile: SubjectProfile,
                noise_db: float) -> np.ndarray:
    coloured = _shape_spectrum(rng.standard_normal(n), sr, _surface_gain_db(profile))
    rms = np.sqrt(np.mean(coloured**2))
    level = 10.0 ** ((noise_db + profile.noise_offset_db) / 20.0)
    return coloured / rms * level if rms > 0 else coloured


def _add_burst(out: np.ndarray, burst: np.ndarray, start: int) -> None:
    start = max(0, min(start, len(out) - 1))
    stop = min(start + len(burst), len(out))
    out[start:stop] += burst[: stop - start]


def _tap(rng: np.random.Generator, sr: int, centre_hz: float, decay_s: float,
         peak: float) -> np.ndarray:
    n = int(sr * min(0.25, decay_s * 8))
    body = _band_noise(rng, n, sr, centre_hz, 0.6)
    t = np.arange(n) / sr
    envelope = np.exp(-t / decay_s)
    envelope[: int(sr * 0.001) or 1] *= np.linspace(0.0, 1.0, int(sr * 0.001) or 1)
    burst = body * envelope
    return burst / np.max(np.abs(burst)) * peak


def _stroke(rng: np.random.Generator, sr: int, centre_hz: float, n: int,
            peak: float, envelope: np.ndarray | None = None) -> np.ndarray:
    n = max(8, n)
    body = _band_noise(rng, n, sr, centre_hz, 0.5)
    if envelope is None:
        envelope = np.linspace(0.05, 1.0, n)  # accelerating swipe
        release = int(sr * 0.01)
        if release and release < n:
            envelope[-release:] *= np.linspace(1.0, 0.0, release)
    burst = body * envelope
    return burst / np.max(np.abs(burst)) * peak


# ---------------------------------------------------------------------------
# Class recipes
# ---------------------------------------------------------------------------

_TAP_PEAK = 0.5
_SCRATCH_PEAK = 0.35


def _shift(centre_hz: float, profile: SubjectProfile) -> float:
    return centre_hz * 2.0**profile.brightness_octaves


def _render_gesture(gesture: GestureClass, rng: np.random.Generator, n: int, sr: int,
                    profile: SubjectProfile) -> np.ndarray:
    out = np.zeros(n)
    duration = n / sr
    jitter = rng.uniform(-0.04, 0.04) * duration

    if gesture is GestureClass.FINGERTIP_TAP:
        burst = _tap(rng, sr, _shift(600.0, profile), 0.040, _TAP_PEAK)
        _add_burst(out, burst, int((duration / 2 + jitter) * sr))
    elif gesture is GestureClass.FINGERNAIL_TAP:
        burst = _tap(rng, sr, _shift(3000.0, profile), 0.015, _TAP_PEAK)
        _add_burst(out, burst, int((duration / 2 + jitter) * sr))
    elif gesture is GestureClass.VERTICAL_SCRATCH:
        burst = _stroke(rng, sr, _shift(2600.0, profile), int(0.150 * sr), _SCRATCH_PEAK)
        _add_burst(out, burst, int((duration / 2 + jitter) * sr - len(burst) // 2))
    elif gesture is GestureClass.CIRCLE_SCRATCH:
        # same band as the W strokes: over the full clip the slow amplitude
        # modulation (2 to 3.4 humps) vs. exactly four strokes is the cue, so
        # cropping long clips to the fixed window genuinely loses information
        span = int(0.90 * n)
        t = np.arange(span) / sr
        am_hz = rng.uniform(2.0, 2.5)
        raised = 0.5 - 0.5 * np.cos(2.0 * np.pi * am_hz * t + rng.uniform(0, 2 * np.pi))
        envelope = 0.03 + 0.97 * raised**1.5
        burst = _stroke(rng, sr, _shift(1600.0, profile), span, _SCRATCH_PEAK,
                        envelope=envelope)
        _add_burst(out, burst, (n - span) // 2)
    elif gesture is GestureClass.W_SCRATCH:
        stroke_len = int(0.13 * duration * sr)
        for frac in (0.125, 0.375, 0.625, 0.875):
            centre = frac * duration + rng.uniform(-0.012, 0.012) * duration
            t = np.arange(stroke_len) / stroke_len
            envelope = np.sin(np.pi * t) ** 1.5  # hump-shaped, like one AM cycle
            burst = _stroke(rng, sr, _shift(1600.0, profile), stroke_len, _SCRATCH_PEAK,
                            envelope=envelope)
            _add_burst(out, burst, int(centre * sr - len(burst) // 2))
    elif gesture is GestureClass.SILENCE:
        if rng.uniform() < 0.4:
            for _ in range(rng.integers(1, 3)):
                click = _tap(rng, sr, rng.uniform(800.0, 4000.0), 0.005, 0.04)
                _add_burst(out, click, int(rng.uniform(0.1, 0.9) * n))
    else:  # pragma: no cover - exhaustive over the enum
        raise InvalidClass(f"no recipe for {gesture}")

    gain = 10.0 ** (profile.gesture_gain_db / 20.0)
    return out * gain


def synth_clip(gesture: GestureClass, seed, subject: SubjectProfile | None = None,
               noise_db: float = -40.0,
               sample_rate_hz: int = TARGET_SAMPLE_RATE) -> AudioClip:
    """One synthetic gesture clip, deterministic per (class, seed, subject).

    `seed` may be an int or a sequence of ints. Duration is uniform in
    [0.75, 1.5] s; the gesture is rendered through the subject's surface
    response and mixed over the subject's coloured background noise.
    """
    if not isinstance(gesture, GestureClass):
        raise InvalidClass(f"not a gesture class: {gesture!r}")
    profile = subject or NEUTRAL_PROFILE
    seed_key = [seed] if isinstance(seed, int) else list(seed)
    return _synth_with_noise_db(gesture, seed_key, profile, noise_db, sample_rate_hz)


def _clip_seed(spec: SynthSpec, gesture: GestureClass, i: int) -> list[int]:
    return [spec.seed, gesture.index, i]


def _record_for(spec: SynthSpec, gesture: GestureClass, i: int) -> GestureRecord:
    subject_index = i % spec.subjects
    return GestureRecord(
        clip_path=f"{gesture.value}/{gesture.value}_{i:04d}.wav",
        label=gesture,
        subject_id=f"s{subject_index:02d}",
        device_name=_DEVICE_NAMES[subject_index % len(_DEVICE_NAMES)],
    )


def dataset_records(spec: SynthSpec) -> list[GestureRecord]:
    """The manifest records a spec will produce (no audio rendered).

    Classes are balanced; subjects are assigned round-robin within each class
    so every subject contributes to every class.
    """
    return [
        _record_for(spec, gesture, i)
        for gesture in GestureClass
        for i in range(spec.clips_per_class)
    ]


def iter_dataset(spec: SynthSpec):
    """Yield (GestureRecord, AudioClip) pairs for the whole dataset."""
    profiles = [subject_profile(i, spec.seed) for i in range(spec.subjects)]
    for gesture in GestureClass:
        for i in range(spec.clips_per_class):
            clip = _synth_with_noise_db(gesture, _clip_seed(spec, gesture, i),
                                        profiles[i % spec.subjects],
                                        spec.noise_db, spec.sample_rate_hz)
            yield _record_for(spec, gesture, i), clip


def _synth_with_noise_db(gesture: GestureClass, seed_key: list[int], profile: SubjectProfile,
                         noise_db: float, sample_rate_hz: int) -> AudioClip:
    rng = np.random.default_rng([gesture.index, *seed_key])
    duration = rng.uniform(MIN_DURATION_S, MAX_DURATION_S)
    n = round(duration * sample_rate_hz)
    samples = _render_gesture(gesture, rng, n, sample_rate_hz, profile)
    samples = samples + _background(rng, n, sample_rate_hz, profile, noise_db)
    return AudioClip(samples=np.clip(samples, -1.0, 1.0), sample_rate_hz=sample_rate_hz)


def make_synthetic_dataset(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Write WAVs plus a manifest.jsonl under out_dir; returns the manifest."""
    out = Path(out_dir)
    records = []
    try:
        for record, clip in iter_dataset(spec):
            path = out / record.clip_path
            path.parent.mkdir(parents=True, exist_ok=True)
            write_wav(path, clip)
            records.append(record)
        manifest = DatasetManifest(records=records, sample_rate_hz=spec.sample_rate_hz)
        write_manifest(out / "manifest.jsonl", manifest)
    except OSError as exc:
        raise IoFailure(f"could not write dataset under {out}: {exc}") from exc
    return manifest

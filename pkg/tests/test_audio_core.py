"""audio_core: WAV I/O, resampling, segmentation, cropping, manifests."""

import struct

import numpy as np
import pytest

from scratch_sense.audio_core import (
    AudioClip,
    DatasetManifest,
    GestureClass,
    GestureRecord,
    crop_symmetric,
    read_manifest,
    read_wav,
    resample,
    segment_fixed_period,
    write_manifest,
    write_wav,
)
from scratch_sense.errors import (
    ClipTooShort,
    EmptyAudio,
    InsufficientAudio,
    InvalidClass,
    MalformedContainer,
    UnsupportedEncoding,
)


def _raw_wav(path, fmt_tag, channels, rate, bits, payload: bytes) -> None:
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, fmt_tag, channels, rate,
        rate * channels * bits // 8, channels * bits // 8, bits,
        b"data", len(payload),
    )
    path.write_bytes(header + payload)


class TestReadWav:
    def test_pcm16_scaling(self, tmp_path):
        path = tmp_path / "a.wav"
        _raw_wav(path, 1, 1, 8000, 16, np.array([0, 16384, -32768], dtype="<i2").tobytes())
        clip = read_wav(path)
        assert clip.sample_rate_hz == 8000
        np.testing.assert_array_equal(clip.samples, [0.0, 0.5, -1.0])

    def test_stereo_averaged(self, tmp_path):
        path = tmp_path / "st.wav"
        frames = np.array([1.0, 0.0], dtype="<f4").tobytes()  # L=1.0, R=0.0
        _raw_wav(path, 3, 2, 44100, 32, frames)
        clip = read_wav(path)
        np.testing.assert_array_equal(clip.samples, [0.5])

    def test_one_second_bookkeeping(self, tmp_path):
        path = tmp_path / "sec.wav"
        _raw_wav(path, 1, 1, 8000, 16, np.zeros(8000, dtype="<i2").tobytes())
        clip = read_wav(path)
        assert len(clip) == 8000 and clip.sample_rate_hz == 8000
        assert clip.duration_s == pytest.approx(1.0)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"OGGSjunkjunkjunk")
        with pytest.raises(MalformedContainer):
            read_wav(path)

    def test_truncated_chunk(self, tmp_path):
        path = tmp_path / "trunc.wav"
        _raw_wav(path, 1, 1, 8000, 16, np.zeros(100, dtype="<i2").tobytes())
        data = path.read_bytes()
        path.write_bytes(data[:-50])
        with pytest.raises(MalformedContainer):
            read_wav(path)

    def test_unsupported_codec(self, tmp_path):
        path = tmp_path / "law.wav"
        _raw_wav(path, 7, 1, 8000, 8, b"\x00" * 64)  # mu-law
        with pytest.raises(UnsupportedEncoding):
            read_wav(path)

    def test_empty_data(self, tmp_path):
        path = tmp_path / "empty.wav"
        _raw_wav(path, 1, 1, 8000, 16, b"")
        with pytest.raises(EmptyAudio):
            read_wav(path)


class TestWriteWav:
    def test_pcm16_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        ints = rng.integers(-32768, 32768, size=500)
        clip = AudioClip(samples=ints / 32768.0, sample_rate_hz=22050)
        path = tmp_path / "rt.wav"
        write_wav(path, clip)
        back = read_wav(path)
        np.testing.assert_array_equal(back.samples, clip.samples)
        assert back.sample_rate_hz == 22050

    def test_float32_round_trip(self, tmp_path):
        samples = np.random.default_rng(1).uniform(-1, 1, 300).astype(np.float32)
        clip = AudioClip(samples=samples.astype(np.float64), sample_rate_hz=44100)
        path = tmp_path / "f32.wav"
        write_wav(path, clip, encoding="float32")
        back = read_wav(path)
        np.testing.assert_array_equal(back.samples, clip.samples)

    def test_refuses_empty(self, tmp_path):
        with pytest.raises(ValueError):
            AudioClip(samples=np.zeros((0, 2)), sample_rate_hz=8000)
        clip = AudioClip(samples=np.zeros(0), sample_rate_hz=8000)
        with pytest.raises(EmptyAudio):
            write_wav(tmp_path / "e.wav", clip)


class TestResample:
    def test_length_ratio(self):
        clip = AudioClip(samples=np.zeros(22050), sample_rate_hz=22050)
        out = resample(clip, 44100)
        assert len(out) == 44100 and out.sample_rate_hz == 44100

    def test_identity_at_target_rate(self):
        samples = np.random.default_rng(2).uniform(-0.5, 0.5, 1000)
        clip = AudioClip(samples=samples, sample_rate_hz=44100)
        out = resample(clip, 44100)
        np.testing.assert_array_equal(out.samples, samples)

    def test_sine_peak_preserved(self):
        # DFT-peak oracle: dominant bin stays at 440 Hz after 2x upsampling
        sr = 22050
        t = np.arange(sr) / sr
        clip = AudioClip(samples=0.7 * np.sin(2 * np.pi * 440.0 * t), sample_rate_hz=sr)
        out = resample(clip, 44100)
        spectrum = np.abs(np.fft.rfft(out.samples))
        peak = int(np.argmax(spectrum))
        expected = 440.0 * len(out) / 44100
        assert abs(peak - expected) <= 1.0

    def test_up_down_round_trip_correlates(self):
        rng = np.random.default_rng(3)
        sr = 8000
        t = np.arange(2 * sr) / sr
        x = sum(rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 6))
                for f in (180.0, 433.0, 1200.0, 2500.0))
        clip = AudioClip(samples=x / np.abs(x).max(), sample_rate_hz=sr)
        back = resample(resample(clip, 2 * sr), sr)
        assert len(back) == len(clip)
        corr = np.corrcoef(back.samples, clip.samples)[0, 1]
        assert corr > 0.99

    def test_empty_clip(self):
        clip = AudioClip(samples=np.zeros(0), sample_rate_hz=8000)
        with pytest.raises(EmptyAudio):
            resample(clip, 16000)


class TestSegment:
    def test_sixty_segments(self):
        clip = AudioClip(samples=np.zeros(60 * 1000), sample_rate_hz=1000)
        segments = segment_fixed_period(clip, 1.0, 60)
        assert len(segments) == 60
        assert all(len(s) == 1000 for s in segments)

    def test_whole_clip(self):
        samples = np.random.default_rng(4).uniform(-1, 1, 1500)
        clip = AudioClip(samples=samples, sample_rate_hz=1000)
        (only,) = segment_fixed_period(clip, 1.5, 1)
        np.testing.assert_array_equal(only.samples, samples)

    def test_insufficient(self):
        clip = AudioClip(samples=np.zeros(10 * 1000), sample_rate_hz=1000)
        with pytest.raises(InsufficientAudio):
            segment_fixed_period(clip, 1.5, 7)  # needs 10.5 s

    def test_non_overlapping_prefix(self):
        samples = np.random.default_rng(5).uniform(-1, 1, 2350)
        clip = AudioClip(samples=samples, sample_rate_hz=100)
        segments = segment_fixed_period(clip, 2.0, 11)
        stitched = np.concatenate([s.samples for s in segments])
        np.testing.assert_array_equal(stitched, samples[: len(stitched)])


class TestCropSymmetric:
    def test_centered_crop_odd_surplus_trims_tail(self):
        n = 66150  # 1.5 s at 44.1 kHz; surplus 33075 is odd
        samples = np.arange(n, dtype=np.float64) / n
        clip = AudioClip(samples=samples, sample_rate_hz=44100)
        out = crop_symmetric(clip, 0.75)
        assert len(out) == 33075
        np.testing.assert_array_equal(out.samples, samples[16537 : 16537 + 33075])

    def test_identity(self):
        samples = np.random.default_rng(6).uniform(-1, 1, 33075)
        clip = AudioClip(samples=samples, sample_rate_hz=44100)
        out = crop_symmetric(clip, 0.75)
        np.testing.assert_array_equal(out.samples, samples)

    def test_gesture_range_maps_to_33075(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            duration = rng.uniform(0.75, 1.5)
            clip = AudioClip(samples=np.zeros(round(duration * 44100)), sample_rate_hz=44100)
            assert len(crop_symmetric(clip, 0.75)) == 33075

    def test_idempotent(self):
        samples = np.random.default_rng(8).uniform(-1, 1, 50000)
        clip = AudioClip(samples=samples, sample_rate_hz=44100)
        once = crop_symmetric(clip, 0.75)
        twice = crop_symmetric(once, 0.75)
        np.testing.assert_array_equal(once.samples, twice.samples)

    def test_too_short(self):
        clip = AudioClip(samples=np.zeros(1000), sample_rate_hz=44100)
        with pytest.raises(ClipTooShort):
            crop_symmetric(clip, 0.75)


class TestManifest:
    def _records(self):
        return [
            GestureRecord("a/x.wav", GestureClass.CIRCLE_SCRATCH, "s00", "handset_a"),
            GestureRecord("a/y.wav", GestureClass.SILENCE, "s01", "tablet_b"),
        ]

    def test_round_trip(self, tmp_path):
        manifest = DatasetManifest(records=self._records())
        path = tmp_path / "manifest.jsonl"
        write_manifest(path, manifest)
        back = read_manifest(path)
        assert back.records == manifest.records
        assert back.subjects == ["s00", "s01"]

    def test_duplicate_paths_rejected(self):
        records = self._records()
        records[1] = GestureRecord("a/x.wav", GestureClass.SILENCE, "s01", "")
        with pytest.raises(ValueError):
            DatasetManifest(records=records)

    def test_unknown_label_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"path": "x.wav", "label": "drumroll", "subject_id": "s0"}\n')
        with pytest.raises(InvalidClass):
            read_manifest(path)

    def test_empty_subject_rejected(self):
        with pytest.raises(ValueError):
            GestureRecord("b.wav", GestureClass.SILENCE, "", "")

    def test_training_validation_requires_all_classes(self):
        manifest = DatasetManifest(records=self._records())
        with pytest.raises(ValueError):
            manifest.validate_for_training()

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("not json\n")
        with pytest.raises(MalformedContainer):
            read_manifest(path)

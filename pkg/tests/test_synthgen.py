"""synthgen: deterministic recipes with measurable class signatures."""

from collections import Counter

import numpy as np
import pytest

from scratch_sense.audio_core import GestureClass, read_manifest, read_wav
from scratch_sense.errors import InvalidClass
from scratch_sense.synthgen import (
    SynthSpec,
    dataset_records,
    make_synthetic_dataset,
    subject_profile,
    synth_clip,
)

SR = 44100


def _envelope(samples: np.ndarray, win: int = 441) -> np.ndarray:
    kernel = np.ones(win) / win
    return np.convolve(np.abs(samples), kernel, mode="same")


def _spectral_centroid(samples: np.ndarray) -> float:
    mag = np.abs(np.fft.rfft(samples))
    freqs = np.fft.rfftfreq(len(samples), 1.0 / SR)
    return float((freqs * mag).sum() / mag.sum())


class TestSynthClip:
    def test_deterministic_per_class_and_seed(self):
        for gesture in GestureClass:
            a = synth_clip(gesture, 123)
            b = synth_clip(gesture, 123)
            np.testing.assert_array_equal(a.samples, b.samples)

    def test_different_seeds_differ(self):
        a = synth_clip(GestureClass.FINGERTIP_TAP, 1)
        b = synth_clip(GestureClass.FINGERTIP_TAP, 2)
        assert len(a) != len(b) or not np.array_equal(a.samples, b.samples)

    def test_durations_within_gesture_range(self):
        for gesture in GestureClass:
            for seed in range(4):
                clip = synth_clip(gesture, seed)
                assert 0.75 <= clip.duration_s <= 1.5
                assert np.all(np.abs(clip.samples) <= 1.0)

    def test_fingernail_decays_within_100ms(self):
        for seed in range(5):
            clip = synth_clip(GestureClass.FINGERNAIL_TAP, seed)
            env = _envelope(clip.samples)
            peak_at = int(np.argmax(env))
            after = peak_at + int(0.100 * SR)
            assert after < len(clip)
            assert env[after] < 0.1 * env[peak_at]

    def test_fingertip_centroid_below_fingernail(self):
        for seed in range(5):
            tip = synth_clip(GestureClass.FINGERTIP_TAP, seed)
            nail = synth_clip(GestureClass.FINGERNAIL_TAP, seed)
            assert _spectral_centroid(tip.samples) < _spectral_centroid(nail.samples)

    def test_silence_quieter_than_taps(self):
        for seed in range(5):
            silence = synth_clip(GestureClass.SILENCE, seed, noise_db=-40.0)
            tap = synth_clip(GestureClass.FINGERTIP_TAP, seed, noise_db=-40.0)
            assert np.abs(silence.samples).max() < np.abs(tap.samples).max()

    def test_rejects_non_class(self):
        with pytest.raises(InvalidClass):
            synth_clip("circle_scratch", 0)


class TestDatasetRecords:
    def test_balanced_600(self):
        records = dataset_records(SynthSpec(seed=0, clips_per_class=100, subjects=8))
        assert len(records) == 600
        by_class = Counter(r.label for r in records)
        assert all(count == 100 for count in by_class.values())

    def test_corpus_scale_count(self):
        # 24 subjects each contributing 60 clips per class: 6 * 24 * 60 records
        records = dataset_records(SynthSpec(seed=0, clips_per_class=24 * 60, subjects=24))
        assert len(records) == 8640
        by_subject = Counter(r.subject_id for r in records)
        assert all(count == 360 for count in by_subject.values())

    def test_round_robin_subjects(self):
        records = dataset_records(SynthSpec(seed=0, clips_per_class=6, subjects=3))
        per_class_subjects = Counter((r.label, r.subject_id) for r in records)
        assert all(count == 2 for count in per_class_subjects.values())


class TestMakeDataset:
    def test_writes_wavs_and_manifest(self, tmp_path):
        spec = SynthSpec(seed=9, clips_per_class=2, subjects=2)
        manifest = make_synthetic_dataset(spec, tmp_path)
        assert len(manifest.records) == 12
        loaded = read_manifest(tmp_path / "manifest.jsonl")
        assert loaded.records == manifest.records
        clip = read_wav(tmp_path / manifest.records[0].clip_path)
        assert clip.sample_rate_hz == SR

    def test_regeneration_byte_identical(self, tmp_path):
        spec = SynthSpec(seed=4, clips_per_class=2, subjects=2)
        make_synthetic_dataset(spec, tmp_path / "a")
        make_synthetic_dataset(spec, tmp_path / "b")
        manifest_a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        manifest_b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert manifest_a == manifest_b
        for record in read_manifest(tmp_path / "a" / "manifest.jsonl").records:
            assert (tmp_path / "a" / record.clip_path).read_bytes() == \
                (tmp_path / "b" / record.clip_path).read_bytes()

    def test_subject_profiles_differ(self):
        a = subject_profile(0, base_seed=1)
        b = subject_profile(1, base_seed=1)
        assert a.subject_id != b.subject_id
        assert a.resonance_hz != b.resonance_hz

"""Shared fixtures and numerical helpers for the test suite."""

import numpy as np
import pytest

from scratch_sense.experiments import featurize_clips
from scratch_sense.synthgen import SynthSpec, iter_dataset


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference scaled by the largest magnitude involved."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def finite_difference_grad(loss_fn, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, on 64-bit reals."""
    assert x.dtype == np.float64
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + h
        f_plus = loss_fn()
        x[idx] = original - h
        f_minus = loss_fn()
        x[idx] = original
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


@pytest.fixture(scope="session")
def tiny_dataset():
    """36 synthetic clips (6 per class, 4 subjects), featurized once per session."""
    spec = SynthSpec(seed=77, clips_per_class=6, subjects=4)
    return featurize_clips(iter_dataset(spec))


@pytest.fixture(scope="session")
def small_dataset():
    """90 synthetic clips (15 per class, 5 subjects) for training smoke tests."""
    spec = SynthSpec(seed=88, clips_per_class=15, subjects=5)
    return featurize_clips(iter_dataset(spec))

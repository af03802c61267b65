"""scratch-sense: acoustic tap/scratch gesture recognition.

Pipeline: WAV audio -> 100-band mel spectrogram -> small CNN -> one of six
gesture classes. The package also ships the two energy-feature MLP baselines,
a grid-search/experiment harness, a deterministic synthetic dataset
generator, evaluation metrics, and a streaming inference service.
"""

from .audio_core import AudioClip, CLASS_NAMES, GestureClass
from .features import MelSpectrogram, WindowTransform, mel_spectrogram
from .models import build_cnn, build_mlp, classify, load_checkpoint, predict_proba, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "CLASS_NAMES",
    "GestureClass",
    "MelSpectrogram",
    "WindowTransform",
    "mel_spectrogram",
    "build_cnn",
    "build_mlp",
    "classify",
    "predict_proba",
    "save_checkpoint",
    "load_checkpoint",
    "__version__",
]

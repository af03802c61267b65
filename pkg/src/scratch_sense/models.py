"""Model assembly, inference, and checkpoint serialization.

Two architectures:

* the gesture CNN: conv(K,3x3,same)-BN-ReLU-pool, twice, then dense(100)-ReLU
  and a 6-way output layer;
* the baseline MLP: one 100-unit hidden layer over a 65- or 100-dim energy
  feature vector.

Both carry a fixed input standardization (mean/std fitted on the training
split) that is stored in the checkpoint alongside the parameters, so a loaded
model reproduces the training-time preprocessing exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .audio_core import CLASS_NAMES, NUM_CLASSES
from .errors import CheckpointFormatError, InvalidParams, ShapeMismatch
from .tensor_nn import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2x2,
    Parameter,
    ReLU,
    softmax,
)

CHECKPOINT_MAGIC = b"SCRN"
CHECKPOINT_VERSION = 1

MLP_INPUT_DIMS = (65, 100)
HIDDEN_UNITS = 100
CNN_INPUT_HEIGHT = 100


class Model:
    """An ordered stack of layers plus the input standardization constants."""

    def __init__(self, layers: list, descriptor: dict, input_shape: tuple[int, ...]) -> None:
        self.layers = layers
        self.descriptor = descriptor
        self.input_shape = input_shape  # per-sample shape, e.g. (1, 100, 65) or (65,)
        self.input_mean = np.zeros(1, dtype=np.float32)
        self.input_std = np.ones(1, dtype=np.float32)

    def set_input_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        std = np.asarray(std, dtype=np.float32)
        self.input_mean = np.asarray(mean, dtype=np.float32)
        self.input_std = np.where(std > 0, std, 1.0).astype(np.float32)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"expected input of shape (N, {self.input_shape}), got {x.shape}")
        out = (np.asarray(x, dtype=np.float32) - self.input_mean) / self.input_std
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward(self, dlogits: np.ndarray) -> None:
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def state_tensors(self) -> list[np.ndarray]:
        """All persistent arrays in checkpoint order."""
        tensors: list[np.ndarray] = [self.input_mean, self.input_std]
        for layer in self.layers:
            for p in layer.parameters():
                tensors.append(p.value)
            if isinstance(layer, BatchNorm2d):
                tensors.append(layer.running_mean)
                tensors.append(layer.running_var)
        return tensors

    def load_state_tensors(self, tensors: list[np.ndarray]) -> None:
        expected = self.state_tensors()
        if len(tensors) != len(expected):
            raise CheckpointFormatError(
                f"checkpoint holds {len(tensors)} tensors, architecture needs {len(expected)}"
            )
        it = iter(tensors)
        self.input_mean = next(it).astype(np.float32)
        self.input_std = next(it).astype(np.float32)
        for layer in self.layers:
            for p in layer.parameters():
                incoming = next(it)
                if incoming.shape != p.value.shape:
                    raise CheckpointFormatError(
                        f"tensor shape {incoming.shape} does not fit parameter {p.value.shape}"
                    )
                p.value = incoming.astype(np.float32)
                p.zero_grad()
            if isinstance(layer, BatchNorm2d):
                layer.running_mean = next(it).astype(np.float32)
                layer.running_var = next(it).astype(np.float32)


def build_cnn(kernels: int, input_width: int, seed: int,
              input_height: int = CNN_INPUT_HEIGHT) -> Model:
    """Fully initialized gesture CNN; parameters are a pure function of seed.

    The flatten width is kernels * (input_height // 4) * (input_width // 4)
    after the two pooling stages.
    """
    if kernels < 1:
        raise InvalidParams("kernel count must be >= 1")
    if input_width < 4 or input_height < 4:
        raise InvalidParams("input must be at least 4x4")
    rng = np.random.default_rng(seed)
    flat = kernels * (input_height // 4) * (input_width // 4)
    layers = [
        Conv2d(1, kernels, rng, padding="same"),
        BatchNorm2d(kernels),
        ReLU(),
        MaxPool2x2(),
        Conv2d(kernels, kernels, rng, padding="same"),
        BatchNorm2d(kernels),
        ReLU(),
        MaxPool2x2(),
        Flatten(),
        Dense(flat, HIDDEN_UNITS, rng),
        ReLU(),
        Dense(HIDDEN_UNITS, NUM_CLASSES, rng),
    ]
    descriptor = {
        "arch": "cnn",
        "kernels": kernels,
        "input_height": input_height,
        "input_width": input_width,
        "classes": list(CLASS_NAMES),
    }
    return Model(layers, descriptor, (1, input_height, input_width))


def build_mlp(input_dim: int, seed: int) -> Model:
    """Baseline classifier: dense(input_dim -> 100) -> ReLU -> dense(100 -> 6)."""
    if input_dim not in MLP_INPUT_DIMS:
        raise InvalidParams(f"baseline input_dim must be one of {MLP_INPUT_DIMS}")
    rng = np.random.default_rng(seed)
    layers = [
        Dense(input_dim, HIDDEN_UNITS, rng),
        ReLU(),
        Dense(HIDDEN_UNITS, NUM_CLASSES, rng),
    ]
    descriptor = {"arch": "mlp", "input_dim": input_dim, "classes": list(CLASS_NAMES)}
    return Model(layers, descriptor, (input_dim,))


def parameter_count(model: Model) -> int:
    return sum(p.value.size for p in model.parameters())


def predict_proba(model: Model, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch; batch-norm runs in eval mode."""
    return softmax(model.forward(x, train=False))


def classify(model: Model, x: np.ndarray) -> np.ndarray:
    """Argmax class per sample; ties resolve to the lowest class index."""
    return np.argmax(predict_proba(model, x), axis=1)


# ---------------------------------------------------------------------------
# Checkpoint container
#
#   magic "SCRN" | u32 version | u32 len | descriptor JSON (UTF-8)
#   | u32 tensor count | per tensor: u32 rank, u32 dims..., float32 LE data
#
# All integers little-endian. The same container carries featurized datasets.
# ---------------------------------------------------------------------------

def write_container(fh: BinaryIO, descriptor: dict, tensors: list[np.ndarray]) -> None:
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<I", CHECKPOINT_VERSION))
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<I", len(tensors)))
    for t in tensors:
        t = np.asarray(t, dtype=np.float32)
        fh.write(struct.pack("<I", t.ndim))
        fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        fh.write(t.astype("<f4").tobytes(order="C"))


def read_container(fh: BinaryIO) -> tuple[dict, list[np.ndarray]]:
    magic = fh.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported container version {version}")
    (desc_len,) = struct.unpack("<I", fh.read(4))
    descriptor = json.loads(fh.read(desc_len).decode("utf-8"))
    (count,) = struct.unpack("<I", fh.read(4))
    tensors = []
    for _ in range(count):
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        raw = fh.read(4 * n)
        if len(raw) != 4 * n:
            raise CheckpointFormatError("truncated tensor data")
        tensors.append(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    return descriptor, tensors


def save_checkpoint(model: Model, path: str | Path, train_config: dict | None = None) -> None:
    descriptor = dict(model.descriptor)
    descriptor["train_config"] = train_config
    with open(path, "wb") as fh:
        write_container(fh, descriptor, model.state_tensors())


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; returns (model, descriptor)."""
    with open(path, "rb") as fh:
        descriptor, tensors = read_container(fh)
    arch = descriptor.get("arch")
    if arch == "cnn":
        model = build_cnn(descriptor["kernels"], descriptor["input_width"], seed=0,
                          input_height=descriptor["input_height"])
    elif arch == "mlp":
        model = build_mlp(descriptor["input_dim"], seed=0)
    else:
        raise CheckpointFormatError(f"unknown architecture {arch!r}")
    model.load_state_tensors(tensors)
    model.descriptor = {k: v for k, v in descriptor.items() if k != "train_config"}
    return model, descriptor

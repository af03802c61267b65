"""Streaming inference: a rolling 0.75 s window re-classified at a fixed hop.

Events fire on accumulated-sample thresholds, so the event sequence produced
for a given audio stream is independent of how the stream is chopped into
frames. The wire protocol (HTTP + WebSocket) is defined in create_app.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_core import AudioClip, CLASS_NAMES, TARGET_SAMPLE_RATE, WINDOW_SAMPLES, WINDOW_SECONDS
from .errors import RateMismatch, SessionClosed
from .features import WindowTransform, mel_spectrogram, window_transform
from .models import Model, load_checkpoint, predict_proba

DEFAULT_HOP_S = 0.25

_session_counter = itertools.count(1)


@dataclass(frozen=True)
class ClassificationEvent:
    """One rolling-window classification: stream time, 6 probabilities, argmax label."""

    t: float
    probabilities: tuple[float, ...]
    label: str

    def to_json_dict(self) -> dict:
        return {"t": self.t, "probs": list(self.probabilities), "label": self.label}


class StreamSession:
    """Per-connection rolling buffer of the most recent 0.75 s of audio.

    Every `hop_s` of newly ingested audio, the buffer is featurized with the
    model's window transform and classified. The buffer starts zero-filled,
    so the first ~0.75 s of events are warm-up.
    """

    def __init__(self, model: Model, transform: WindowTransform,
                 hop_s: float = DEFAULT_HOP_S, sample_rate_hz: int = TARGET_SAMPLE_RATE,
                 session_id: str | None = None) -> None:
        if sample_rate_hz != TARGET_SAMPLE_RATE:
            raise RateMismatch(f"streaming expects {TARGET_SAMPLE_RATE} Hz, got {sample_rate_hz}")
        if hop_s <= 0:
            raise ValueError("hop_s must be positive")
        self.model = model
        self.transform = transform
        self.hop_s = hop_s
        self.session_id = session_id or f"session-{next(_session_counter)}"
        self._hop_samples = round(hop_s * TARGET_SAMPLE_RATE)
        self._buffer = np.zeros(WINDOW_SAMPLES)
        self._pending = 0
        self._total = 0
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        self._closed = True

    def ingest(self, samples: np.ndarray) -> list[ClassificationEvent]:
        """Append PCM samples; return the events whose hop boundary they complete."""
        if self._closed:
            raise SessionClosed(f"{self.session_id} is closed")
        samples = np.asarray(samples, dtype=np.float64)
        events: list[ClassificationEvent] = []
        i = 0
        while i < len(samples):
            take = min(len(samples) - i, self._hop_samples - self._pending)
            chunk = samples[i : i + take]
            self._buffer = np.concatenate([self._buffer[take:], chunk])
            self._pending += take
            self._total += take
            i += take
            if self._pending == self._hop_samples:
                self._pending = 0
                events.append(self._classify())
        return events

    def _classify(self) -> ClassificationEvent:
        clip = AudioClip(samples=self._buffer.copy(), sample_rate_hz=TARGET_SAMPLE_RATE)
        spec = window_transform(mel_spectrogram(clip), self.transform)
        x = spec.values[None, None, :, :].astype(np.float32)
        probs = predict_proba(self.model, x)[0]
        label = CLASS_NAMES[int(np.argmax(probs))]
        return ClassificationEvent(
            t=self._total / TARGET_SAMPLE_RATE,
            probabilities=tuple(float(p) for p in probs),
            label=label,
        )


def pcm16_bytes_to_samples(data: bytes) -> np.ndarray:
    """Little-endian 16-bit PCM to float64 in [-1, 1)."""
    return np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0


def samples_to_pcm16_bytes(samples: np.ndarray) -> bytes:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2").tobytes()


def replay_clip(session: StreamSession, clip: AudioClip,
                frame_size: int) -> list[ClassificationEvent]:
    """Feed a recorded clip through a session in frames of `frame_size` samples."""
    if clip.sample_rate_hz != TARGET_SAMPLE_RATE:
        raise RateMismatch(f"clip is {clip.sample_rate_hz} Hz, stream wants {TARGET_SAMPLE_RATE}")
    events: list[ClassificationEvent] = []
    for start in range(0, len(clip), frame_size):
        events.extend(session.ingest(clip.samples[start : start + frame_size]))
    return events


def transform_for_model(descriptor: dict) -> WindowTransform:
    """The window transform the checkpointed model was trained with."""
    config = descriptor.get("train_config") or {}
    return WindowTransform.from_name(config.get("transform", "crop"))


def create_app(model: Model, transform: WindowTransform, hop_s: float = DEFAULT_HOP_S,
               ui_dir: str | Path | None = None):
    """FastAPI app exposing the model over HTTP + WebSocket.

    - GET /model -> {"classes": [...], "window_s": 0.75, "hop_s": ...}
    - WS /stream: binary frames of 16-bit LE PCM mono at 44.1 kHz in;
      one JSON text frame {"t", "probs", "label"} out per classification.
    - Optional static serving of the demo UI bundle at /.
    """
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="scratch-sense")

    @app.get("/model")
    def model_info() -> dict:
        return {"classes": list(CLASS_NAMES), "window_s": WINDOW_SECONDS, "hop_s": hop_s}

    @app.websocket("/stream")
    async def stream(ws: WebSocket) -> None:
        await ws.accept()
        session = StreamSession(model, transform, hop_s=hop_s)
        try:
            while True:
                data = await ws.receive_bytes()
                for event in session.ingest(pcm16_bytes_to_samples(data)):
                    await ws.send_json(event.to_json_dict())
        except WebSocketDisconnect:
            pass
        finally:
            session.close()

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def create_app_from_checkpoint(checkpoint_path: str | Path, hop_s: float = DEFAULT_HOP_S,
                               ui_dir: str | Path | None = None):
    model, descriptor = load_checkpoint(checkpoint_path)
    return create_app(model, transform_for_model(descriptor), hop_s=hop_s, ui_dir=ui_dir)

"""Exception types raised across the toolkit.

Everything inherits from ScratchSenseError so callers (notably the CLI) can
distinguish anticipated domain failures from genuine bugs.
"""


class ScratchSenseError(Exception):
    """Base class for all toolkit errors."""


# --- audio ---

class MalformedContainer(ScratchSenseError):
    """WAV/checkpoint container is structurally invalid (bad magic, chunk sizes)."""


class UnsupportedEncoding(ScratchSenseError):
    """Audio encoding we do not handle (compressed codecs, odd bit depths)."""


class EmptyAudio(ScratchSenseError):
    """An operation received a clip with zero samples."""


class InsufficientAudio(ScratchSenseError):
    """Clip too short for the requested segmentation."""


class ClipTooShort(ScratchSenseError):
    """Clip shorter than the requested crop target."""


# --- features / tensors ---

class InvalidParams(ScratchSenseError):
    """Parameter values outside an operation's documented domain."""


class WrongShape(ScratchSenseError):
    """A spectrogram or feature matrix has the wrong dimensions."""


class ShapeMismatch(ScratchSenseError):
    """Tensor shapes do not agree for the requested operation."""


class DegenerateBatch(ScratchSenseError):
    """Batch statistics undefined (fewer than 2 values per channel)."""


class InvalidLabel(ScratchSenseError):
    """A class label outside the 6-class range."""


# --- datasets / experiments ---

class DatasetTooSmall(ScratchSenseError):
    """Not enough records (or an empty partition) for the requested split."""


class UnknownSubject(ScratchSenseError):
    """Subject id not present in the manifest."""


class OverlappingSubjectSets(ScratchSenseError):
    """Test and validation subject sets intersect."""


class NumericalDivergence(ScratchSenseError):
    """Training loss became non-finite (typical of the largest learning rate)."""


class InvalidClass(ScratchSenseError):
    """Unknown gesture class name."""


class IoFailure(ScratchSenseError):
    """Filesystem write/read failed while emitting artifacts."""


# --- metrics ---

class EmptyInput(ScratchSenseError):
    """Metric called with zero samples."""


class LengthMismatch(ScratchSenseError):
    """Truth/prediction vectors differ in length."""


class SingleClassInput(ScratchSenseError):
    """ROC requested but only one class is present."""


# --- checkpoints ---

class CheckpointFormatError(MalformedContainer):
    """Checkpoint file fails magic/version/structure checks."""


# --- serving ---

class SessionClosed(ScratchSenseError):
    """Audio pushed into a closed streaming session."""


class RateMismatch(ScratchSenseError):
    """Stream sample rate differs from the model's expected rate."""

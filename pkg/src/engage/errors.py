"""Exception types raised across the engage package."""


class EngageError(Exception):
    """Base class for all errors raised by this package."""


# --- ingest ---------------------------------------------------------------

class MissingColumn(EngageError):
    """Feature file header does not match the required column schema."""


class MalformedRow(EngageError):
    """Feature file contains a non-numeric or wrong-width data row."""


class EmptyFile(EngageError):
    """Feature file has no data rows."""


class DuplicateVideoId(EngageError):
    """Manifest lists the same video_id more than once."""


class MixedLabelKinds(EngageError):
    """Manifest mixes ordinal and continuous labels (or class counts)."""


class UnresolvablePath(EngageError):
    """Manifest references a feature file that does not exist."""


class AllFramesInvalid(EngageError):
    """Every frame in a series failed tracking; nothing to fill from."""


# --- features -------------------------------------------------------------

class EmptySeries(EngageError):
    """Operation requires a non-empty frame series."""


class SeriesTooShort(EngageError):
    """Signal too short for the requested differencing statistics."""


class TooFewSamples(EngageError):
    """Not enough samples to fit the requested estimator."""


class LayoutMismatch(EngageError):
    """Feature layout does not match the one a normalizer was fitted on."""


# --- models ---------------------------------------------------------------

class InvalidConfig(EngageError):
    """Model or run configuration violates its invariants."""


class ShapeMismatch(EngageError):
    """Input tensor shape does not match the model configuration."""


class NonFiniteGradient(EngageError):
    """Backward pass produced NaN or infinite gradients."""


class VersionMismatch(EngageError):
    """Checkpoint format or feature-layout version is not supported."""


class CorruptCheckpoint(EngageError):
    """Checkpoint files are unreadable, truncated, or inconsistent."""


# --- ordinal --------------------------------------------------------------

class OutOfRange(EngageError):
    """Class index or probability outside its documented range."""


class InputOutOfRange(EngageError):
    """Exceedance probabilities must lie in [0, 1]."""


# --- training -------------------------------------------------------------

class EmptyClass(EngageError):
    """Balanced batching requires at least one sample per class."""


class DivergedLoss(EngageError):
    """Training loss became NaN or infinite."""


# --- eval -----------------------------------------------------------------

class LengthMismatch(EngageError):
    """Predictions and targets differ in length (or are empty)."""


class MissingCheckpoint(EngageError):
    """Run directory does not contain a checkpoint to evaluate."""

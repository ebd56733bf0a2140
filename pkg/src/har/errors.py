"""Exception hierarchy shared across the pipeline.

Every error this package raises on purpose derives from PipelineError so
the CLI can map data problems to a clean exit code instead of a traceback.
"""


class PipelineError(Exception):
    """Base class for all intentional errors raised by this package."""


# recording / manifest parsing

class MissingColumn(PipelineError):
    """CSV header does not match the expected schema."""


class MalformedRow(PipelineError):
    """A CSV data row could not be parsed (bad float, wrong arity)."""


class NonMonotoneTime(PipelineError):
    """Timestamps are not strictly increasing."""


class UnknownLabel(PipelineError):
    """Activity label outside the six-class set."""


class RateMismatch(PipelineError):
    """Measured sample rate deviates from the expected rate."""


class TooFewSubjects(PipelineError):
    """Not enough subjects for the requested split or fold policy."""


class InvalidSpec(PipelineError):
    """Nonsensical request (nonpositive counts, bad ratios, conflicts)."""


class TooFewSamples(PipelineError):
    """Not enough samples to fit the requested interpolant."""


# tensor engine

class ShapeMismatch(PipelineError):
    """Operand shapes do not conform to the operator signature."""


class DegenerateBatch(PipelineError):
    """Batch statistics undefined (fewer than two values per channel)."""


class InvalidTarget(PipelineError):
    """Class index outside [0, num_classes)."""


class DetachedLoss(PipelineError):
    """Loss tensor was not produced through the given tape."""


# model / training

class InvalidConfig(PipelineError):
    """Model configuration violates its invariants."""


class CorruptCheckpoint(PipelineError):
    """Checkpoint magic, shape table, or digest does not verify."""


class StepOutOfRange(PipelineError):
    """Scheduler queried outside [0, total_steps)."""


class NonFiniteGradient(PipelineError):
    """A gradient entry is NaN or infinite."""


class EmptyDataset(PipelineError):
    """No labeled windows available for training or validation."""


class NonFiniteLoss(PipelineError):
    """Training loss became NaN or infinite."""


# post-processing / evaluation

class NonContiguousSegments(PipelineError):
    """Segment spans do not tile the recording contiguously."""


class LengthMismatch(PipelineError):
    """Paired label sequences differ in length."""


class EmptyMatrix(PipelineError):
    """Metrics requested on a confusion matrix with zero total count."""


class MissingMetadata(PipelineError):
    """A scored segment lacks the requested grouping key."""


# statistics

class EmptyGroup(PipelineError):
    """A sample group has no observations."""


class UnknownTag(PipelineError):
    """A requested group tag matches no subject."""

"""
Exception types raised across the tracker.

Every error carries a message that names the offending value and, where it
makes sense, what was expected, so that CLI output is actionable without a
traceback.
"""


class SesiamError(Exception):
    """Base class for all tracker errors."""


class InvalidArgumentError(SesiamError, ValueError):
    pass


class ShapeError(SesiamError, ValueError):
    pass


class ConfigError(InvalidArgumentError):
    """Raised when a configuration section fails schema validation."""

    def __init__(self, section: str, problems):
        self.section = section
        self.problems = list(problems)
        details = "; ".join(self.problems)
        super().__init__(f"invalid {section} config: {details}")


class CheckpointError(SesiamError, RuntimeError):
    pass


class AnnotationParseError(SesiamError, ValueError):
    def __init__(self, path, line_number: int, line: str, reason: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(
            f"{self.path}:{line_number}: cannot parse `{line.strip()}` ({reason})"
        )


class StructureError(SesiamError, ValueError):
    pass


class UnsampleableSequenceError(SesiamError, RuntimeError):
    pass


class LostTargetError(SesiamError, RuntimeError):
    pass


class TrackingFailureError(SesiamError, RuntimeError):
    """Raised when the network output cannot be turned into a box.

    Attributes:
        last_state: the tracker state before the failing update.
    """

    def __init__(self, message: str, last_state=None):
        self.last_state = last_state
        super().__init__(message)


class TrainingDivergedError(SesiamError, RuntimeError):
    def __init__(self, step: int, loss: float, provenance):
        self.step = step
        self.loss = loss
        self.provenance = list(provenance)
        sources = ", ".join(str(item) for item in self.provenance[:8])
        if len(self.provenance) > 8:
            sources += f", ... ({len(self.provenance)} samples)"
        super().__init__(
            f"non-finite loss `{loss}` at step {step}; batch provenance: {sources}"
        )

"""Exception hierarchy.

Every error carries a short ``code`` string; the CLI maps classes onto exit
statuses (2 configuration, 3 numerical, 4 I/O).
"""


class HwmapError(Exception):
    code = "hwmap"


class ConfigurationError(HwmapError, ValueError):
    code = "config"


class DomainError(HwmapError, ValueError):
    """Input outside the mathematical domain of an operation."""

    code = "domain"


class ResourceError(HwmapError, RuntimeError):
    code = "resource"


class DegenerateFieldError(HwmapError, ValueError):
    code = "degenerate"


class NumericalError(HwmapError, RuntimeError):
    code = "numerical"


class BlowUpError(NumericalError):
    """Raised when a time integration leaves the target or produces NaN."""

    code = "blowup"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergenceError(NumericalError):
    code = "divergence"

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class SingularGaugeError(NumericalError):
    code = "singular-gauge"


class SnapshotError(HwmapError, IOError):
    code = "snapshot"


class SnapshotFormatError(SnapshotError):
    code = "snapshot-format"


class SnapshotTruncatedError(SnapshotError):
    code = "snapshot-truncated"


class SnapshotLayoutError(SnapshotError):
    code = "snapshot-layout"

"""Exception types shared across the package."""


class DassimError(Exception):
    """Base class for package-specific errors."""


class DimensionMismatch(DassimError):
    """Array shapes do not chain or do not match a declared contract."""


class NotSymmetric(DassimError):
    """A covariance input is not symmetric within tolerance."""


class NotPositiveDefinite(DassimError):
    """Cholesky factorization hit a non-positive pivot; invalid covariance."""


class NanEncountered(DassimError):
    """A computation produced non-finite values.

    ``partial`` carries whatever partial result (iteration log, loss
    history) was accumulated before the failure, or None.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SequenceLengthMismatch(DassimError):
    """Forward-model output length disagrees with the observation spacing."""


class ZeroReference(DassimError):
    """RRMSE reference is identically zero; the metric is undefined."""


class UnknownParameter(DassimError):
    """Parameter name not in the case-parameter inventory."""


class TypeMismatch(DassimError):
    """Parameter value has the wrong type for its slot."""


class ValidationFailed(DassimError):
    """Case validation failed; ``errors`` lists every violated rule."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("case validation failed:\n  - " + "\n  - ".join(self.errors))


class MissingArtifact(DassimError):
    """A report stage could not find persisted run outputs.

    ``missing`` lists the absent file paths.
    """

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing artifacts: " + ", ".join(str(m) for m in self.missing))


class DisconnectedGraphWarning(UserWarning):
    """A recorded input never influences the requested output; its gradient is zero."""

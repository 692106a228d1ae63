"""Exceptions shared across the package."""


class CertificateError(Exception):
    """Base class for certificate-pipeline failures."""


class CertifyRefused(CertificateError):
    """The one-step certificate cannot be issued for this run.

    Raised when no admissible step fraction exists (decrease factor >= 1),
    when the initial error has no component along the leading eigenvector,
    or when the decrease condition fails after the step was re-checked with
    measured quantities. `details` carries the scalars computed up to the
    point of refusal so callers can report them.
    """

    def __init__(self, reason: str, details: dict | None = None):
        super().__init__(reason)
        self.reason = reason
        self.details = details or {}

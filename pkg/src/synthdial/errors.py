"""Exception types shared across the pipeline."""


class SynthdialError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(SynthdialError):
    """Run configuration is invalid or incomplete."""


class SchemaError(SynthdialError):
    """A record violates its schema or an operation precondition."""


class RejectCeilingError(SynthdialError):
    """Malformed-record count crossed the configured ceiling for one load."""


class UpstreamDataError(SynthdialError):
    """A stage input file is missing or unusable."""


class TemplateError(SynthdialError):
    """Prompt template is malformed or has unresolved placeholders."""


class TransportError(SynthdialError):
    """Backend unreachable after exhausting retries."""


class TransientBackendError(TransportError):
    """Single failed attempt that is worth retrying (429, 5xx, timeout)."""


class ProtocolError(SynthdialError):
    """Backend answered with a malformed or empty payload."""


class JudgeParseError(SynthdialError):
    """Judge reply held no usable score even after the reprompt retry."""


class FailureCeilingError(SynthdialError):
    """Per-item failure rate crossed the configured ceiling.

    Carries the partial result so callers can still write a manifest.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial

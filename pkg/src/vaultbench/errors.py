"""Shared error hierarchy.

Every error carries a stable machine ``code`` (kebab-case) so the HTTP
layer, the CLI, and the tests can match on it without parsing messages.
"""

from __future__ import annotations


class VaultbenchError(Exception):
    """Base class; ``code`` is the stable machine-readable identifier."""

    code = "internal-error"

    def __init__(self, message: str = "", *, code: str | None = None):
        super().__init__(message or self.__class__.code)
        if code is not None:
            self.code = code


# --- storage ---------------------------------------------------------------

class DuplicateSpaceError(VaultbenchError):
    code = "duplicate-space"


class AccessDeniedError(VaultbenchError):
    code = "access-denied"


class InvalidPathError(VaultbenchError):
    code = "invalid-path"


class NotFoundError(VaultbenchError):
    code = "not-found"


class DanglingEnvelopeError(VaultbenchError):
    code = "dangling-envelope"


class InvalidSchemaError(VaultbenchError):
    code = "invalid-schema"


class NotAnEnvelopeError(VaultbenchError):
    code = "not-an-envelope"


# --- crypto ----------------------------------------------------------------

class IntegrityError(VaultbenchError):
    code = "integrity-failure"


class WrongKeyError(VaultbenchError):
    code = "wrong-key"


class NotOwnerError(VaultbenchError):
    code = "not-owner"


class NotActiveError(VaultbenchError):
    code = "not-active"


class EntropyUnavailableError(VaultbenchError):
    code = "entropy-unavailable"


class ChannelError(VaultbenchError):
    code = "channel-error"


# --- data preparation ------------------------------------------------------

class PrepError(VaultbenchError):
    """Pipeline validation/execution error, tagged with the failing step."""

    def __init__(self, message: str, *, code: str, step_index: int | None = None):
        super().__init__(message, code=code)
        self.step_index = step_index


class UnknownColumnError(PrepError):
    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message, code="unknown-column", step_index=step_index)


class TypeMismatchError(PrepError):
    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message, code="type-mismatch", step_index=step_index)


class NameCollisionError(PrepError):
    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message, code="name-collision", step_index=step_index)


class CsvParseError(VaultbenchError):
    code = "parse-error"

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


# --- analytics -------------------------------------------------------------

class NonNumericColumnError(VaultbenchError):
    code = "non-numeric-column"


class InsufficientRowsError(VaultbenchError):
    code = "insufficient-rows"


class SingularDesignError(VaultbenchError):
    code = "singular-design"


class KExceedsRowsError(VaultbenchError):
    code = "k-exceeds-rows"


class ZeroVarianceError(VaultbenchError):
    code = "zero-variance"


class EmptyInputError(VaultbenchError):
    code = "empty-input"


# --- scheduling ------------------------------------------------------------

class InvalidWorkflowError(VaultbenchError):
    code = "invalid-workflow"


class MissingAgreementError(VaultbenchError):
    code = "missing-agreement"

    def __init__(self, message: str, dataset_id: str | None = None):
        super().__init__(message)
        self.dataset_id = dataset_id


class IllegalTransitionError(VaultbenchError):
    code = "illegal-transition"


class NotCancellableError(VaultbenchError):
    code = "not-cancellable"


class UnknownJobError(VaultbenchError):
    code = "unknown-job"


class JobNotFinishedError(VaultbenchError):
    code = "job-not-finished"


# --- orchestrator ----------------------------------------------------------

class BudgetExceededError(VaultbenchError):
    code = "budget-exceeded"


class AlreadyProvisionedError(VaultbenchError):
    code = "already-provisioned"


class HandshakeTimeoutError(VaultbenchError):
    code = "handshake-timeout"


class UnknownSandboxError(VaultbenchError):
    code = "unknown-sandbox"


class AlreadyTerminatedError(VaultbenchError):
    code = "already-terminated"


# --- config / api ----------------------------------------------------------

class ConfigError(VaultbenchError):
    code = "invalid-config"

    def __init__(self, message: str, *, code: str | None = None, field: str | None = None):
        super().__init__(message, code=code)
        self.field = field


class MissingFieldError(ConfigError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message, code="missing-field", field=field)


class OutOfRangeError(ConfigError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message, code="out-of-range", field=field)


class UnauthenticatedError(VaultbenchError):
    code = "unauthenticated"


class ApiError(VaultbenchError):
    """Client-side mirror of a non-success HTTP response."""

    def __init__(
        self,
        code: str,
        message: str,
        correlation_id: str = "",
        status: int = 400,
        step_index: int | None = None,
    ):
        super().__init__(message, code=code)
        self.correlation_id = correlation_id
        self.status = status
        self.step_index = step_index

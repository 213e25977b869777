"""Exception types shared across the framework."""

from __future__ import annotations


class TaskforgeError(Exception):
    """Base class for all framework errors."""


class IllegalTransition(TaskforgeError):
    def __init__(self, current: object, event: object) -> None:
        super().__init__(f"no edge from {current} on event {event}")
        self.current = current
        self.event = event


class EmptyAssignment(TaskforgeError):
    pass


class NotFound(TaskforgeError):
    def __init__(self, kind: str, record_id: str) -> None:
        super().__init__(f"{kind} {record_id!r} not found")
        self.kind = kind
        self.record_id = record_id


class UniquenessViolation(TaskforgeError):
    pass


class StorageFailure(TaskforgeError):
    pass


class FinalizedStateOverwrite(TaskforgeError):
    pass


class ConfigError(TaskforgeError):
    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key


class BuildError(TaskforgeError):
    pass


class MissingAsset(BuildError):
    pass


class DeployError(TaskforgeError):
    pass


class PortInUse(DeployError):
    pass


class BuildMissing(DeployError):
    pass


class NotAssigned(TaskforgeError):
    pass


class UnknownProcedure(TaskforgeError):
    pass


class HandlerError(TaskforgeError):
    pass


class ProviderUnavailable(TaskforgeError):
    """Retryable provider-side failure."""


class InvalidAmount(TaskforgeError):
    pass


class DuplicateSession(TaskforgeError):
    pass


class MalformedPacket(TaskforgeError):
    pass


class NoUnitsAvailable(TaskforgeError):
    pass


class UnknownComparator(TaskforgeError):
    pass


class EmptyFeedback(TaskforgeError):
    pass


class AlreadyModerated(TaskforgeError):
    pass


class ParseError(TaskforgeError):
    def __init__(self, line_number: int, cause: str) -> None:
        super().__init__(f"line {line_number}: {cause}")
        self.line_number = line_number


class DoubleDecision(TaskforgeError):
    pass


class UnknownTemplate(TaskforgeError):
    pass


class NoReviewableUnits(TaskforgeError):
    pass

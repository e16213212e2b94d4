"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class CSOError(Exception):
    """Base class for all package errors."""


# ontology / exchange

class UnknownRecordKind(CSOError, ValueError):
    def __init__(self, kind: object) -> None:
        super().__init__(f"unknown record kind: {kind!r}")
        self.kind = kind


class InvariantViolation(CSOError, ValueError):
    """A record or store invariant does not hold."""


class SchemaViolation(InvariantViolation):
    """A record body does not validate; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str = "") -> None:
        self.field = field
        self.message = message or "invalid"
        super().__init__(f"{field}: {self.message}")


class RecordSyntaxError(CSOError, ValueError):
    """Input is not well-formed JSON (or not UTF-8)."""

    def __init__(self, message: str, line: int = 1, column: int = 1) -> None:
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


# record stores

class StoreMismatch(CSOError, ValueError):
    def __init__(self, store: object, kind: str) -> None:
        super().__init__(f"record kind {kind!r} does not belong in {store}")
        self.store = store
        self.kind = kind


class MissingReference(CSOError, LookupError):
    """Something referenced by id does not exist."""


# resource graph

class DuplicateResourceId(CSOError, ValueError):
    pass


class InvalidResource(InvariantViolation):
    pass


class MissingResource(MissingReference):
    pass


class CycleError(InvariantViolation):
    pass


# provenance

class ProvenanceError(CSOError):
    pass


class SequenceGap(ProvenanceError, ValueError):
    pass


class CreateOnNonEmpty(ProvenanceError, ValueError):
    pass


class MissingCreate(ProvenanceError, ValueError):
    pass


class AppendAfterDelete(ProvenanceError, ValueError):
    def __init__(self, message: str, incident: object = None) -> None:
        super().__init__(message)
        self.incident = incident


class UnknownDataId(MissingReference):
    pass


# warnings / scoring

class UnresolvedTarget(MissingReference):
    pass


class MissingComponentScore(CSOError, LookupError):
    pass


class NoApplicableRules(CSOError, ValueError):
    pass

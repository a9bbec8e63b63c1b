"""Exception types shared across the toolkit."""

from __future__ import annotations


class DiagkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(DiagkitError):
    """A line of an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class IntegrityError(DiagkitError):
    """Loaded data violates a referential or structural invariant."""


class NotFound(DiagkitError):
    """A referenced entity id is not present in the graph."""


class DomainError(DiagkitError):
    """A numeric argument is outside its valid range."""


class SchemaError(DiagkitError):
    """A corpus record is invalid."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        parts = []
        if line is not None:
            parts.append(f"line {line}")
        if field is not None:
            parts.append(f"field '{field}'")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.field = field


class EmptyReasoning(DiagkitError):
    """Reasoning text was empty where content is required."""


class EmptyInput(DiagkitError):
    """An aggregation operation received no records."""


class ProviderFailure(DiagkitError):
    """A remote provider kept failing after the configured retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ScriptMiss(DiagkitError):
    """The stub provider was asked for a request it has no script for.

    Always a test or fixture bug; the stub never fabricates output.
    """

    def __init__(self, key: str):
        super().__init__(f"no scripted response for request key {key}")
        self.key = key


class UnparsableLabel(DiagkitError):
    """Provider output matched no attribution label after a repair retry."""


class MalformedTrace(DiagkitError):
    """A reasoning trace lacks the final-diagnosis section."""


class UnknownDisorder(DiagkitError):
    """A concluded disorder has no criteria entry."""

    def __init__(self, disorder: str):
        super().__init__(f"no criteria entry for disorder '{disorder}'")
        self.disorder = disorder


class MissingSection(DiagkitError):
    """Structured provider output is missing one or more expected sections."""

    def __init__(self, labels: list[str]):
        super().__init__(f"missing sections: {', '.join(labels)}")
        self.labels = list(labels)


class StageParseFailure(DiagkitError):
    """A pipeline stage produced unusable output even after a repair retry."""

    def __init__(self, stage: int, message: str = ""):
        detail = f": {message}" if message else ""
        super().__init__(f"stage {stage} output could not be parsed{detail}")
        self.stage = stage


class StageError(DiagkitError):
    """Wraps an error from a scoring pipeline stage with its stage label."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class MissingScore(DiagkitError):
    """Records lack a confidence score where one is required."""

    def __init__(self, dialogue_ids: list[str]):
        super().__init__(f"records without dcs: {', '.join(dialogue_ids)}")
        self.dialogue_ids = list(dialogue_ids)


class UsageError(DiagkitError):
    """Bad command line invocation."""

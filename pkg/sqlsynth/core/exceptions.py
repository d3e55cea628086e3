"""Error hierarchy shared by every service.

Each error keeps its structured payload in ``details`` so the CLI can print
one machine-readable block without knowing the concrete class.
"""

from typing import Any, Dict, List, Optional, Sequence


class SynthError(Exception):
    """Base class for all toolkit errors"""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, "details": self.details}


class PreconditionError(SynthError, ValueError):
    pass


# SQL analysis

class ParseError(SynthError):
    def __init__(self, offset: int, expected: str, message: Optional[str] = None):
        super().__init__(message or f"SQL parse error at offset {offset}: expected {expected}",
                         offset=offset, expected=expected)
        self.offset = offset
        self.expected = expected


class UnsupportedFeature(SynthError):
    pass


class UnsupportedStatement(SynthError):
    def __init__(self, verb: str):
        super().__init__(f"Unsupported top-level statement: {verb}", verb=verb)
        self.verb = verb


# Taxonomy

class ScoreOutOfRange(SynthError):
    def __init__(self, score: int):
        super().__init__(f"Complexity score {score} lies outside every configured level range", score=score)
        self.score = score


class CombinatorialLimit(SynthError):
    def __init__(self, candidates: int, ceiling: int):
        super().__init__(f"Enumeration would visit {candidates} candidates, above the ceiling of {ceiling}",
                         candidates=candidates, ceiling=ceiling)


class EmptyCorpus(SynthError):
    def __init__(self, what: str = "corpus"):
        super().__init__(f"Empty {what}")


# Database forge

class SchemaRejected(SynthError):
    def __init__(self, messages: Sequence[str]):
        super().__init__("Generated schema failed validation: " + "; ".join(messages), violations=list(messages))
        self.violations = list(messages)


class EnhancementRejected(SynthError):
    def __init__(self, diff: Sequence[str]):
        super().__init__("Enhanced schema rejected: " + "; ".join(diff), diff=list(diff))
        self.diff = list(diff)


class CycleError(SynthError):
    def __init__(self, cycle: Sequence[str]):
        path = " -> ".join(list(cycle) + [cycle[0]]) if cycle else ""
        super().__init__(f"Foreign-key cycle: {path}", cycle=list(cycle))
        self.cycle = list(cycle)


class ConstraintViolation(SynthError):
    def __init__(self, table: str, row: Any, constraint: str):
        super().__init__(f"Row {row!r} of table {table} violates {constraint}",
                         table=table, row=row, constraint=constraint)
        self.table = table
        self.row = row
        self.constraint = constraint


class DatabaseIOError(SynthError):
    pass


class QueryFailed(SynthError):
    pass


class QueryTimeout(QueryFailed):
    pass


# Seeding

class SeedRejected(SynthError):
    def __init__(self, diagnosis: str, attempts: int):
        super().__init__(f"Seed rejected after {attempts} attempt(s): {diagnosis}",
                         diagnosis=diagnosis, attempts=attempts)
        self.diagnosis = diagnosis


class RepairExhausted(SynthError):
    def __init__(self, history: List[Dict[str, Any]]):
        super().__init__(f"Repair budget exhausted after {len(history)} attempt(s)", history=history)
        self.history = history


# Gateway

class GatewayError(SynthError):
    def __init__(self, message: str, attempts: Sequence[str] = ()):
        super().__init__(message, attempts=list(attempts))
        self.attempts = list(attempts)


class AuthError(GatewayError):
    pass


class TransientError(SynthError):
    """A provider failure worth retrying (connection drop, throttling, 5xx)"""


class MissingPlaceholder(SynthError):
    def __init__(self, name: str, template: str):
        super().__init__(f"Template {template} requires placeholder {{{name}}}", placeholder=name, template=template)
        self.placeholder = name


class UnknownPlaceholder(SynthError):
    def __init__(self, name: str, template: str):
        super().__init__(f"Template {template} declares no placeholder {{{name}}}", placeholder=name, template=template)
        self.placeholder = name


class ExtractionError(SynthError):
    def __init__(self, message: str, span: str):
        super().__init__(message, span=span)
        self.span = span


# Evaluation

class GoldFailure(SynthError):
    pass


class EmptyGroup(SynthError):
    def __init__(self, group: str):
        super().__init__(f"No verdicts for {group}", group=group)


class MissingVerdict(SynthError):
    def __init__(self, criteria: Sequence[str]):
        super().__init__("Judge omitted verdicts for: " + ", ".join(criteria), criteria=list(criteria))
        self.criteria = list(criteria)


class EmbedderError(SynthError):
    pass

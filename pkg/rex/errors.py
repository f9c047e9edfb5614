"""Exception hierarchy shared by every rex module.

Each error carries a short machine ``code`` (mirrors the ``code`` field of a
run-error event) and the process ``exit_code`` the CLI returns for it.
"""
from typing import Any, Dict, Optional


class RexError(Exception):
    """Base class for all errors raised by rex"""
    code: str = "rex"
    exit_code: int = 4

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        return self.message


class ConfigError(RexError):
    """Invalid or inconsistent run configuration"""
    code = "config"
    exit_code = 2


class DataError(RexError):
    """Input data could not be loaded or does not match expectations"""
    code = "data"
    exit_code = 3


class ParseError(DataError):
    """A line of an input file could not be parsed"""
    code = "parse"

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        location = f"{path}:{line_number}" if path and line_number else (path or "")
        super().__init__(f"{location}: {message}" if location else message,
                         path=path, line_number=line_number)
        self.path = path
        self.line_number = line_number


class EmptyGraphError(DataError):
    """The knowledge graph has no triples"""
    code = "empty_graph"


class UnknownEntityError(DataError, KeyError):
    """Entity id or label does not resolve"""
    code = "unknown_entity"

    def __str__(self) -> str:
        return self.message


class UnknownRelationError(DataError, KeyError):
    """Relation id or label does not resolve"""
    code = "unknown_relation"

    def __str__(self) -> str:
        return self.message


class CoverageError(DataError):
    """A cluster assignment does not cover every entity"""
    code = "coverage"


class OntologyError(DataError):
    """Ontology files are inconsistent (cycle, unknown class)"""
    code = "ontology"


class VocabularyMismatchError(DataError):
    """A checkpoint was trained against a different graph vocabulary"""
    code = "vocabulary"


class UndefinedICError(RexError):
    """Information content is undefined for a zero-degree node"""
    code = "undefined_ic"


class ClusteringError(RexError):
    """k-means cannot be run with the requested parameters"""
    code = "clustering"


class ContractViolation(RexError):
    """A caller broke a precondition (illegal action, shape mismatch, ...)"""
    code = "contract"


class TrainingError(RexError):
    """Training produced non-finite values"""
    code = "training"

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message, diagnostics=diagnostics or {})
        self.diagnostics = diagnostics or {}

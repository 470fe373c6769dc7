"""Exception taxonomy shared across the package.

ConfigError maps to CLI exit code 3, everything else to exit code 1.
"""


class DocgcnError(Exception):
    pass


class ShapeError(DocgcnError, ValueError):
    pass


class ConfigError(DocgcnError, ValueError):
    pass


class NonFiniteError(DocgcnError, FloatingPointError):
    """A forward op produced NaN/Inf; surfaced instead of propagated."""


class IngestError(DocgcnError, ValueError):
    def __init__(self, message: str, doc_id: str | None = None):
        self.doc_id = doc_id
        if doc_id is not None:
            message = f"document {doc_id!r}: {message}"
        super().__init__(message)


class CorpusParseError(DocgcnError, ValueError):
    def __init__(self, message: str, line: int, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}" + (f", field {field!r}" if field else "")
        super().__init__(f"{where}: {message}")


class GraphBuildError(DocgcnError):
    pass


class LabelError(DocgcnError, ValueError):
    pass


class EvalError(DocgcnError):
    pass


class CheckpointError(DocgcnError):
    pass


class TrainingDiverged(DocgcnError, RuntimeError):
    pass

"""
Error hierarchy for estimation, ingestion and simulation failures.

Every error carries a stable ``code`` used by the CLI diagnostics and the
HTTP error bodies.
"""

from typing import List, Optional


class EstimationError(ValueError):
    """Base class for operation-level failures"""

    code = "estimation-error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_dict(self) -> dict:
        return {"code": self.code, "detail": self.message}


class NoSupportAtLag(EstimationError):
    """No pair of units lies within the bandwidth of the requested lag"""

    code = "no-support-at-lag"

    def __init__(self, delta: float, h: float):
        super().__init__(f"no unit pair within bandwidth h={h:g} of lag {delta:g}")
        self.delta = delta
        self.h = h


class DegenerateG(EstimationError):
    code = "degenerate-G"


class InsufficientSubjects(EstimationError):
    code = "insufficient-subjects"


class NoUsablePairs(EstimationError):
    code = "no-usable-pairs"


class TaperExceedsGrid(EstimationError):
    code = "taper-exceeds-grid"


class InvalidCorrelation(EstimationError):
    code = "invalid-correlation"


class BiasUndefined(EstimationError):
    code = "bias-undefined"


class GridCoverageError(EstimationError):
    code = "grid-coverage"


class ShapeMismatch(EstimationError):
    code = "shape-mismatch"


class ConfigError(EstimationError):
    code = "config"


class IngestError(EstimationError):
    """Input file rejected; ``rows`` holds 1-based file line numbers"""

    def __init__(self, code: str, message: str, rows: Optional[List[int]] = None):
        self.rows = list(rows or [])
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:10])
            more = "" if len(self.rows) <= 10 else f" (+{len(self.rows) - 10} more)"
            message = f"{message} [rows {shown}{more}]"
        super().__init__(message)
        self.code = code


class ReplicateFailure(EstimationError):
    """A simulation replicate failed; wraps the underlying error"""

    code = "replicate-failure"

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"replicate {index} failed: {cause}")
        self.index = index
        self.cause = cause

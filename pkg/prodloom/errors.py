"""
Exception hierarchy shared across the library. Input and configuration problems
derive from ValidationError, numerical and identification failures derive from
EstimationError. The CLI maps the two branches onto distinct exit statuses.
"""

# Standard
from typing import Iterable, Optional, Sequence

# Local
from .constants import MAX_BOOTSTRAP_FAILURE_RATE

## Base ########################################################################


class ProdloomError(Exception):
    """Base class for all errors raised by prodloom"""


class ValidationError(ProdloomError, ValueError):
    """Inputs or configuration do not satisfy a documented precondition"""


class EstimationError(ProdloomError, RuntimeError):
    """An estimation step could not produce a well-defined result"""


## Validation ##################################################################


class SchemaError(ValidationError):
    """A CSV file does not have the expected columns"""

    def __init__(self, path: str, columns: Sequence[str]):
        self.path = path
        self.columns = list(columns)
        super().__init__(
            f"Malformed header in {path}: missing column(s) {', '.join(self.columns)}"
        )


class DuplicateKeyError(ValidationError):
    """Two or more rows share a key that must be unique"""

    def __init__(self, path: str, keys: Iterable[tuple]):
        self.path = path
        self.keys = sorted(keys)
        listing = "; ".join(
            "DUP " + " ".join(str(part) for part in key) for key in self.keys
        )
        super().__init__(f"Duplicate keys in {path}: {listing}")


class MissingMappingError(ValidationError):
    """Product codes without an entry in the concordance"""

    def __init__(self, codes: Iterable[str]):
        self.codes = sorted(set(codes))
        super().__init__(f"No concordance entry for code(s): {', '.join(self.codes)}")


class PanelValidationError(ValidationError):
    """A constructed panel violates one of its invariants"""

    def __init__(self, findings: Sequence["object"], ingest_log: Sequence[str] = ()):
        self.findings = list(findings)
        self.ingest_log = list(ingest_log)
        listing = "\n".join(str(finding) for finding in self.findings)
        super().__init__(f"Panel failed validation:\n{listing}")


class ConfigurationError(ValidationError):
    """Invalid parameter value or combination of options"""


## Estimation ##################################################################


class SingularDesignError(EstimationError):
    """The design matrix is rank deficient"""

    def __init__(self, columns: Sequence[str], context: str = "design"):
        self.columns = list(columns)
        super().__init__(
            f"Singular {context}: collinear column(s) {', '.join(self.columns)}"
        )


class IdentificationError(EstimationError):
    """Fewer excluded instruments than endogenous regressors"""


class UndefinedStatisticError(EstimationError):
    """A test statistic has no valid degrees of freedom"""


class SingularityError(EstimationError):
    """Shares on the boundary make the share derivatives degenerate"""


class ConductInversionError(EstimationError):
    """A plant's first-order-condition block cannot be inverted"""

    def __init__(self, plant_id: str, year: int, market: Optional[str] = None):
        self.plant_id = plant_id
        self.year = year
        self.market = market
        super().__init__(
            f"Singular conduct block for plant {plant_id} in year {year}"
            + (f" (market {market})" if market is not None else "")
        )


class EquilibriumError(EstimationError):
    """The price equilibrium solver did not converge"""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Price equilibrium did not converge in {iterations} iterations "
            f"(last max |dp| = {residual:.3e})"
        )


class JoinError(EstimationError):
    """Rows that should match across tables are missing"""

    def __init__(self, what: str, keys: Iterable[tuple]):
        self.keys = sorted(keys)
        listing = ", ".join(
            "(" + ", ".join(str(part) for part in key) + ")" for key in self.keys[:20]
        )
        more = "" if len(self.keys) <= 20 else f" and {len(self.keys) - 20} more"
        super().__init__(f"Missing {what} for: {listing}{more}")


class SeparationError(EstimationError):
    """A covariate (or the outcome itself) perfectly predicts the outcome"""

    def __init__(self, covariate: str):
        self.covariate = covariate
        super().__init__(f"Perfect prediction detected on '{covariate}'")


class ConvergenceError(EstimationError):
    """An iterative optimizer hit its iteration limit"""

    def __init__(self, message: str, trace: Sequence[float] = ()):
        self.trace = list(trace)
        super().__init__(message)


class BootstrapDegeneracyError(EstimationError):
    """Too many bootstrap replications failed"""

    def __init__(self, n_failed: int, n_total: int):
        self.n_failed = n_failed
        self.n_total = n_total
        super().__init__(
            f"{n_failed} of {n_total} bootstrap replications failed "
            f"(more than {int(100 * MAX_BOOTSTRAP_FAILURE_RATE)}%)"
        )

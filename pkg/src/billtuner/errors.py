"""Exception hierarchy shared across the package.

Every error that callers are expected to catch selectively gets its own
class; plain ``ValueError`` is reserved for programming mistakes caught at
construction time (invariant violations in dataclass ``__post_init__``).
"""


class BilltunerError(Exception):
    """Base class for all package-specific errors."""


# --- weather / time series -------------------------------------------------

class MissingColumn(BilltunerError):
    """Weather CSV lacks a required column."""


class CoverageGap(BilltunerError):
    """Weather file does not span the requested time grid."""


class ParseError(BilltunerError):
    """Weather CSV row could not be parsed."""


# --- plant -------------------------------------------------------------------

class DomainError(BilltunerError):
    """Input outside its admissible range."""


class NumericalBlowup(BilltunerError):
    """Integration left the admissible temperature range (unstable step)."""


class ClosedLoopError(BilltunerError):
    """Controller or plant failure during a closed-loop run, with step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


# --- system identification ---------------------------------------------------

class InsufficientData(BilltunerError):
    """Not enough samples to build the regression problem."""


class RankDeficient(BilltunerError):
    """Regressor matrix is singular to tolerance; inputs not exciting."""


class UnstableModel(BilltunerError):
    """Fitted autoregressive polynomial has roots on or outside the unit circle."""


class HistoryTooShort(BilltunerError):
    """Output or input history shorter than the model lags require."""


# --- QP solver ----------------------------------------------------------------

class NotPSD(BilltunerError):
    """Cost matrix is not positive semidefinite (regularized Cholesky failed)."""


# --- MPC ----------------------------------------------------------------------

class ForecastTooShort(BilltunerError):
    """Forecast window does not cover the control horizon."""


class RelaxationInfeasible(BilltunerError):
    """Root relaxation of the mixed-integer problem is infeasible."""


# --- comfort -------------------------------------------------------------------

class NoConvergence(BilltunerError):
    """Clothing surface temperature iteration did not converge."""


class NoOccupiedSteps(BilltunerError):
    """Trace contains no occupied steps to evaluate comfort on."""


# --- billing --------------------------------------------------------------------

class GridMismatch(BilltunerError):
    """Power series step incompatible with 15-minute peak windows."""


class SpanMismatch(BilltunerError):
    """Trace timestamps fall outside the billed month."""


class MissingMonthPrice(BilltunerError):
    """Dynamic contract has no price for the requested month."""


class DuplicateCode(BilltunerError):
    """Two contracts share the same code."""


class SchemaError(BilltunerError):
    """Contract definition violates the schema."""


# --- Gaussian process -------------------------------------------------------------

class CholeskyFailure(BilltunerError):
    """Covariance matrix not positive definite even after jitter retries."""


class NegativeVariance(BilltunerError):
    """Posterior variance negative beyond numerical tolerance."""


# --- tuner --------------------------------------------------------------------------

class NoFeasibleCandidate(BilltunerError):
    """Proposal requested although no candidate satisfies the constraint bound.

    Callers must run the feasibility check first; hitting this indicates a
    logic bug, not a property of the problem.
    """


class BlackboxFailure(BilltunerError):
    """Black-box evaluation raised; carries the point and iteration."""

    def __init__(self, theta, iteration: int, cause: BaseException):
        super().__init__(f"iteration {iteration} at theta={theta}: {cause}")
        self.theta = theta
        self.iteration = iteration
        self.cause = cause

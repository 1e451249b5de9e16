"""Exception types raised by the solver stack.

Every error the package raises deliberately derives from :class:`MFGError`
so callers (and the command line driver) can separate "the input was bad"
from "the numerics broke" from "the optimizer proved infeasibility".
"""


class MFGError(Exception):
    """Base class for all package errors."""


class ValidationError(MFGError, ValueError):
    """Input object violates a documented precondition (shape, mass, sign)."""


class GridMismatchError(ValidationError):
    """Two objects live on different state/time grids."""


class StepSizeError(MFGError, RuntimeError):
    """Explicit time step violates the CFL stability bound.

    The message names the worst node and the largest admissible step.
    """


class SchemeError(MFGError, RuntimeError):
    """Discrete generator cannot be built monotonically (stencil sign check)."""


class NumericalError(MFGError, RuntimeError):
    """A runtime monitor tripped: mass defect, leakage budget, negativity."""


class BoundTooSmallError(MFGError, ValueError):
    """A search window ended on its boundary; enlarge the bound and retry."""


class InfeasibleError(MFGError, RuntimeError):
    """Constrained best-response program admits no feasible point.

    Carries a constructive witness report: which constraint the constant
    control candidate violates, and by how much.
    """

    def __init__(self, message, witness_report=None):
        super().__init__(message)
        self.witness_report = witness_report


class DivergenceError(MFGError, RuntimeError):
    """A particle trajectory left the sanity box (or went non-finite)."""

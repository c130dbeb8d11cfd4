"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class LindbladResignError(Exception):
    """Base class for all errors raised by this package."""


class DimMismatch(LindbladResignError, ValueError):
    pass


class NonHermitianInput(LindbladResignError, ValueError):
    pass


class InvalidDensity(LindbladResignError, ValueError):
    """A matrix failed one of the density-matrix invariants.

    ``invariant`` names the violated property and ``magnitude`` the size of
    the violation, so callers can report them without parsing the message.
    """

    invariant = "density"

    def __init__(self, magnitude: float, tol: float):
        self.magnitude = float(magnitude)
        self.tol = float(tol)
        super().__init__(
            f"{self.invariant} violated: magnitude {self.magnitude:.3e} "
            f"exceeds tolerance {self.tol:.3e}"
        )


class NotHermitian(InvalidDensity):
    invariant = "hermiticity"


class TraceNotOne(InvalidDensity):
    invariant = "unit trace"


class NotPSD(InvalidDensity):
    invariant = "positive semidefiniteness"


class DegenerateTrackingFailure(LindbladResignError):
    def __init__(self, t: float, index: int, overlaps):
        self.t = float(t)
        self.index = int(index)
        self.overlaps = overlaps
        super().__init__(
            f"ambiguous eigenvector matching at t={self.t:.17g} (grid index {self.index})"
        )


class InsufficientStencil(LindbladResignError, ValueError):
    pass


class OffDiagonalResidualTooLarge(LindbladResignError):
    def __init__(self, t, residual: float, tol: float):
        self.t = t
        self.residual = float(residual)
        self.tol = float(tol)
        super().__init__(
            f"off-diagonal residual {self.residual:.3e} > {self.tol:.3e} at t={t}"
        )


class TraceLeak(LindbladResignError):
    pass


class InfeasibleTrace(LindbladResignError, ValueError):
    pass


class SingularRate(LindbladResignError):
    """A rate would diverge because its denominator eigenvalue is (near) zero.

    Raised either for a single compensation round (``t``, ``pair``, ``flux``
    and ``denominator`` set) or for a whole trajectory, in which case
    ``intervals`` lists ``(t_start, t_end)`` windows enclosing every singular
    grid point.
    """

    def __init__(self, t=None, pair=None, flux=None, denominator=None, intervals=None):
        self.t = t
        self.pair = pair
        self.flux = flux
        self.denominator = denominator
        self.intervals = list(intervals or [])
        if self.intervals:
            spans = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in self.intervals)
            msg = f"singular rates on interval(s) {spans}"
        else:
            msg = (
                f"singular rate at t={t}: flux {flux:.3e} from {pair[1] + 1} to "
                f"{pair[0] + 1} needs denominator {denominator:.3e}"
            )
        super().__init__(msg)


class GridMismatch(LindbladResignError, ValueError):
    pass


class StepBlowup(LindbladResignError):
    def __init__(self, t: float, norm: float):
        self.t = float(t)
        self.norm = float(norm)
        super().__init__(f"integration blew up near t={self.t:.6g} (max entry {self.norm:.3e})")


class UnknownModel(LindbladResignError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown model"


class InvalidInitialState(LindbladResignError, ValueError):
    pass


class SingularAt(LindbladResignError, ValueError):
    def __init__(self, t: float, reason: str):
        self.t = float(t)
        super().__init__(f"reference rate singular at t={self.t:.17g}: {reason}")


class ParseError(LindbladResignError, ValueError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = int(line)
        super().__init__(f"{self.path}:{self.line}: {message}")

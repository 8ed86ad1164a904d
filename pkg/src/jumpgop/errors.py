"""Exception types raised by the library."""

from __future__ import annotations


class JumpGopError(Exception):
    """Base class for all library errors."""


class SpecError(JumpGopError, ValueError):
    """Structurally malformed market spec or scenario (wrong shapes, unsorted breakpoints, missing keys)."""


class IllConditioned(JumpGopError, ArithmeticError):
    def __init__(self, piece: int, cond: float):
        self.piece = piece
        self.cond = cond
        super().__init__(f"volatility matrix on piece {piece} is ill-conditioned (cond={cond:.3g})")


class NoGop(JumpGopError):
    """Raised when the market price of event risk reaches sqrt(intensity) on some jump column."""

    def __init__(self, column: int, piece: int | None = None, theta: float | None = None,
                 sqrt_lambda: float | None = None):
        self.column = column
        self.piece = piece
        self.theta = theta
        self.sqrt_lambda = sqrt_lambda
        where = f" on piece {piece}" if piece is not None else ""
        detail = ""
        if theta is not None and sqrt_lambda is not None:
            detail = f": theta={theta:.6g} >= sqrt(lambda)={sqrt_lambda:.6g}"
        super().__init__(f"no growth optimal portfolio (jump column {column}{where}){detail}")


class InadmissibleVolatility(JumpGopError, ValueError):
    pass


class InadmissibleStrategy(JumpGopError, ValueError):
    pass


class UnsupportedConstraint(JumpGopError, ValueError):
    pass


class InsufficientPaths(JumpGopError, ValueError):
    """Near-boundary scenario requested with too few Monte Carlo paths."""

"""Exception hierarchy shared across the solver stack."""

from __future__ import annotations


class SwitchbackError(Exception):
    """Base class for all library errors."""


class GeneratorError(SwitchbackError):
    """Invalid transition-rate matrix."""


class NegativeOffDiagonal(GeneratorError):
    def __init__(self, i: int, j: int, value: float):
        self.i, self.j, self.value = i, j, value
        super().__init__(f"rate[{i},{j}] = {value} is negative (regimes 1-based)")


class RowSumNonzero(GeneratorError):
    def __init__(self, i: int, row_sum: float):
        self.i, self.row_sum = i, row_sum
        super().__init__(f"row {i} of the rate matrix sums to {row_sum}, expected 0")


class ProblemFormatError(SwitchbackError):
    """Problem JSON does not match the documented schema."""


class DegenerateProblem(SwitchbackError):
    """Envelope constants are not finite for this problem."""


class NonFiniteDerivative(SwitchbackError):
    """Backward integration blew up (Riccati escape or bad data)."""

    def __init__(self, t: float, detail: str = ""):
        self.t = t
        msg = f"non-finite derivative or blow-up at t = {t:.6g}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class RiccatiSingular(SwitchbackError):
    """Control-weight matrix lost invertibility along the solve."""

    def __init__(self, t: float, regime: int, margin: float):
        self.t, self.regime, self.margin = t, regime, margin
        super().__init__(
            f"weight matrix singular at t = {t:.6g}, regime {regime} "
            f"(margin {margin:.3e})"
        )


class SingularRL(SwitchbackError):
    def __init__(self, t: float, regime: int):
        self.t, self.regime = t, regime
        super().__init__(f"R_L singular at t = {t:.6g}, regime {regime}")


class SingularRF(SwitchbackError):
    def __init__(self, t: float, regime: int):
        self.t, self.regime = t, regime
        super().__init__(f"R_F singular at t = {t:.6g}, regime {regime}")


class RequiresL3(SwitchbackError):
    """Leader feedback is only available under the structural zeros of (L3)."""


class StructuralMismatch(SwitchbackError):
    """Problem has nonzero coefficients excluded by the pricing reduction."""


class GridMismatch(SwitchbackError):
    """Strategy grid and problem grid disagree."""

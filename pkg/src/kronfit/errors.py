"""Exception hierarchy.

Two families matter to callers: :class:`DataError` (bad input, CLI exit 2)
and :class:`NumericalError` (a computation could not proceed, CLI exit 3).
"""

from __future__ import annotations


class KronfitError(Exception):
    """Base class for all package errors."""


class DataError(KronfitError, ValueError):
    """Input data is malformed."""


class NumericalError(KronfitError, ArithmeticError):
    """A numerical precondition failed."""


class DimensionMismatch(DataError):
    pass


class NotSymmetric(DataError):
    pass


class RaggedRows(DataError):
    def __init__(self, row: int, expected: int, got: int):
        self.row, self.expected, self.got = row, expected, got
        super().__init__(f"row {row}: expected {expected} fields, got {got}")


class NonNumericCell(DataError):
    def __init__(self, row: int, col: int, text: str):
        self.row, self.col, self.text = row, col, text
        super().__init__(f"row {row}, column {col}: cannot parse {text!r} as a number")


class EmptyFile(DataError):
    pass


class NotPositiveDefinite(NumericalError):
    def __init__(self, index: int, eigenvalue: float):
        self.index, self.eigenvalue = index, eigenvalue
        super().__init__(
            f"matrix is not positive definite: eigenvalue #{index} = {eigenvalue:.6g}"
        )


class SingularCovariance(NumericalError):
    def __init__(self, min_eigenvalue: float, floor: float):
        self.min_eigenvalue = min_eigenvalue
        self.floor = floor
        # a ridge this large lifts the smallest eigenvalue to ten times the floor
        self.suggested_ridge = max(10.0 * floor - min_eigenvalue, floor)
        super().__init__(
            f"sample covariance is singular: smallest eigenvalue {min_eigenvalue:.6g} "
            f"<= floor {floor:.6g}; consider adding a ridge eps*I with "
            f"eps = {self.suggested_ridge:.6g}"
        )


class SingularNormalEquations(NumericalError):
    pass


class HessianNotPd(NumericalError):
    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"expected Hessian is not positive definite (smallest eigenvalue "
            f"{min_eigenvalue:.6g}); one-step update aborted"
        )


class NotOveridentified(NumericalError):
    pass


class RankDeficientContrast(NumericalError):
    pass


class UnsupportedFactorDim(DataError):
    pass


class NonPositiveDiagonal(NumericalError):
    pass

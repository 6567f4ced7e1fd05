"""Exception hierarchy.

Input problems derive from :class:`InputError`; anything that blocks an
estimate because an arm is empty or a propensity is zero derives from
:class:`PositivityError`. The CLI maps the two families to different exit
codes.
"""

from __future__ import annotations


class PosauditError(Exception):
    pass


class InputError(PosauditError, ValueError):
    pass


class MissingColumn(InputError):
    def __init__(self, column: str, path: str | None = None):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"column {column!r} not found{where}")


class UnparseableValue(InputError):
    def __init__(self, row: int, column: str, value: str, expected: str):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as {expected}")


class NonBinaryAction(UnparseableValue):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(row, column, value, "a binary action (0 or 1)")


class EmptyData(InputError):
    pass


class EmptyTable(InputError):
    pass


class UnknownStratum(InputError, KeyError):
    def __init__(self, pattern):
        self.pattern = tuple(pattern)
        super().__init__(f"covariate pattern {self.pattern} not observed")

    def __str__(self) -> str:
        return self.args[0]


class SpecPatternMissing(InputError):
    def __init__(self, pattern):
        self.pattern = tuple(pattern)
        super().__init__(f"structural spec has no entry for pattern {self.pattern}")


class PlanPatternMissing(InputError):
    def __init__(self, pattern):
        self.pattern = tuple(pattern)
        super().__init__(f"plan is not defined at pattern {self.pattern}")


class InvalidSpec(InputError):
    pass


class NoActionVariation(InputError):
    pass


class RankDeficientDesign(InputError):
    pass


class NoTreatedUnits(InputError):
    pass


class InvalidLevel(InputError):
    pass


class TooManyFailedReplicates(PosauditError):
    def __init__(self, failures: int, replicates: int, cap: float):
        self.failures, self.replicates, self.cap = failures, replicates, cap
        super().__init__(
            f"{failures} of {replicates} bootstrap replicates failed "
            f"(cap {cap:.0%} of replicates)"
        )


class PositivityError(PosauditError):
    """An estimate needs information from an arm that has none at some pattern."""

    def __init__(self, message: str, cell, arm: int):
        self.cell = tuple(cell)
        self.arm = int(arm)
        super().__init__(message)


class UndefinedCellMean(PositivityError):
    def __init__(self, cell, arm: int):
        super().__init__(
            f"outcome mean undefined: no units with A={arm} in cell {tuple(cell)}", cell, arm
        )


class PositivityViolation(PositivityError):
    def __init__(self, cell, arm: int):
        super().__init__(
            f"division by zero: Pr(A={arm} | Z={tuple(cell)}) is 0", cell, arm
        )


class SeparationWarning(UserWarning):
    pass

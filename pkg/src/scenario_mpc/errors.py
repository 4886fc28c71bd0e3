"""Exception types raised across the package."""


class ScenarioMpcError(Exception):
    """Base class for package errors."""


class DimensionError(ScenarioMpcError, ValueError):
    """An argument has a shape inconsistent with the model or horizon."""


class RankDeficientError(ScenarioMpcError, ValueError):
    """Least-squares regressors do not have full column rank."""

    def __init__(self, message: str, rank: int, required: int):
        super().__init__(message)
        self.rank = rank
        self.required = required


class DatasetFormatError(ScenarioMpcError, ValueError):
    """A dataset CSV file could not be parsed."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.row = row
        self.column = column


class SolverError(ScenarioMpcError, RuntimeError):
    """The QP backend did not return an optimal solution."""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution

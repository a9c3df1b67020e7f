"""Exception hierarchy shared across the package."""
from __future__ import annotations


class DshgtError(Exception):
    """Base class for all package errors."""


class GraphError(DshgtError, ValueError):
    pass


class FrontendError(DshgtError, ValueError):
    """Lexing/parsing failure; message carries ``file:line``."""

    def __init__(self, message: str, file: str | None = None, line: int | None = None):
        self.file = file
        self.line = line
        where = f"{file or '<input>'}:{line}: " if line is not None else ""
        super().__init__(where + message)


class SchemaError(DshgtError, ValueError):
    pass


class DataError(DshgtError, ValueError):
    pass


class ShapeError(DshgtError, ValueError):
    pass


class NumericalError(DshgtError, ArithmeticError):
    pass


class CheckpointError(DshgtError, ValueError):
    pass

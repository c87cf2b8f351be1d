"""Exception types shared across the package."""


class CapExceededError(ValueError):
    """A brute-force enumeration would exceed its configured size cap."""


class DivergenceError(RuntimeError):
    """Policy evaluation has no finite solution (improper policy with discount 1)."""


class DegenerateLikelihoodError(ValueError):
    """A demonstration trace has probability zero under every latent option path."""


class TaskParseError(ValueError):
    """A plain-text task file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class GenerationError(RuntimeError):
    """A random task generator failed to produce a valid layout."""

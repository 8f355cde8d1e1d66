"""Exception types shared across the package.

Two families, matching the CLI exit-code contract: bad inputs exit with 2,
analytically out-of-range requests exit with 3.
"""


class ValidationError(ValueError):
    """Malformed input: bad parameter value, file, or configuration."""


class CsvParseError(ValidationError):
    """A CSV cell failed to parse; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class AnalysisDomainError(ValueError):
    """Inputs are valid but lie outside the assumptions of an analytic formula."""

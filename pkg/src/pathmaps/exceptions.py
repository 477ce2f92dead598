"""
Root exception type for pathmaps.

Every domain error carries a stable ``code`` string so callers (and the CLI)
can react to a failure class without parsing messages.
"""


class PathmapsError(Exception):
    """Base exception for all pathmaps errors."""

    code = "pathmaps-error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"

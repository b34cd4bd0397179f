"""Exception hierarchy shared by every pipeline stage."""

from typing import Iterable, List, Optional


class GuidedAugmentationError(RuntimeError):
    """Base for all errors raised by the package."""

    code = "runtime_error"

    def __init__(self, message: str, details: Optional[Iterable[str]] = None):
        super().__init__(message)
        self.details: List[str] = list(details or [])


class ConfigError(GuidedAugmentationError):
    """Raised when a configuration fails validation.

    All problems found are reported together in ``problems``.
    """

    code = "config_error"

    def __init__(self, problems: Iterable[str]):
        self.problems = list(problems)
        super().__init__(
            f"{len(self.problems)} configuration problem(s)", details=self.problems
        )

"""Exception hierarchy shared across the package."""


class Idea23DError(Exception):
    """Base class for every domain error raised by this package."""

    stage = "idea23d"


class PreconditionError(Idea23DError, ValueError):
    stage = "precondition"


class ValidationError(Idea23DError):
    stage = "validation"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid input")


class RenderError(Idea23DError):
    stage = "render"


class BackendError(Idea23DError):
    stage = "backend"


class TransportError(BackendError):
    """Timeout or HTTP failure; ``retryable`` is False for client-side (4xx) errors."""

    def __init__(self, message: str = "", retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class EmptyResponse(BackendError):
    pass


class BackendContractViolation(BackendError):
    pass


class EmptyForeground(BackendError):
    """Background removal left no foreground pixel."""

    stage = "rembg"


class PromptParseError(Idea23DError):
    stage = "prompt-generation"


class AllDraftsFailed(Idea23DError):
    stage = "t23d"


class MemoryOrderError(Idea23DError):
    stage = "memory"


class LoadError(Idea23DError):
    stage = "session-load"


class MetricError(Idea23DError):
    stage = "metric"


class DatasetError(Idea23DError):
    stage = "dataset"


class ConfigError(Idea23DError):
    stage = "config"

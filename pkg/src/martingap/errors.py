"""Exception hierarchy shared by the library and the CLI."""


class MartingapError(Exception):
    """Base class for all library errors."""


class DomainError(MartingapError, ValueError):
    """An argument lies outside the domain of a function."""


class StructuralError(MartingapError, ValueError):
    """Inputs have incompatible shapes or provenance."""


class DegenerateFitError(MartingapError):
    """A fit cannot be carried out because the design is singular."""


class ConfigError(MartingapError):
    """Invalid or incomplete configuration."""


class BackendError(MartingapError):
    """A predictor backend failed."""


class RetryableError(BackendError):
    """Remote backend kept rate limiting after all retries were used."""


class ProtocolError(BackendError):
    """Remote backend returned a response that could not be parsed."""


class GapScanError(BackendError):
    """A predictor failed during a gap scan; carries the failing work item."""

    def __init__(self, message: str, n: int, index: int):
        super().__init__(f"{message} (n={n}, sequence={index})")
        self.n = n
        self.index = index

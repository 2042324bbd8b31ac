"""Exception hierarchy shared by all aib modules.

The CLI maps these onto exit codes: validation problems (ConfigError,
InputError, DomainError, DimensionError) exit 1, file/format problems
(FormatError, OSError) exit 2, and DivergenceError exits 3.
"""


class AibError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AibError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(AibError):
    """An API was used outside its contract (e.g. backward on a non-scalar)."""


class DomainError(AibError):
    """A numeric argument is outside the mathematical domain (e.g. sigma <= 0)."""


class ConfigError(AibError):
    """Invalid or missing configuration."""


class InputError(AibError):
    """Invalid runtime input data (e.g. a class label out of range)."""


class FormatError(AibError):
    """A file does not match its declared binary format."""


class DivergenceError(AibError):
    """Training produced a non-finite loss term."""

    def __init__(self, term: str, epoch: int, step: int):
        self.term = term
        self.epoch = epoch
        self.step = step
        super().__init__(
            f"non-finite loss term '{term}' at epoch {epoch}, step {step}"
        )

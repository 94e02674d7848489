"""Error hierarchy shared by every emabench module"""
from typing import Optional


class EmaBenchError(Exception):
    """Base class for all emabench errors"""


class InputError(EmaBenchError, ValueError):
    """Caller supplied malformed data (shapes, labels, layouts, specs)"""


class DegenerateBatchError(InputError):
    """Train-mode batch normalization on a batch with a single row"""


class ContractError(EmaBenchError, RuntimeError):
    """An operation was called outside its precondition"""


class ConfigError(InputError):
    """Invalid experiment configuration

    Attributes:
        key: Dotted ``section.key`` that failed validation, when known
    """

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class DivergenceError(EmaBenchError):
    """Training produced a non-finite loss or an exploding parameter norm"""

    def __init__(self, message: str, epoch: int, step: int):
        self.epoch = epoch
        self.step = step
        super().__init__(f"{message} (epoch {epoch}, step {step})")

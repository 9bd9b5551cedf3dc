"""
Errors - Exception hierarchy shared by the samplers, accountant and loaders
"""
from typing import Optional


class DPBayesError(Exception):
    """Base class for every error raised by dpbayes"""


class ConfigurationError(DPBayesError, ValueError):
    """A model, sampler or command-line setting is invalid"""


class ArgumentError(DPBayesError, ValueError):
    """A call received arguments it cannot work with"""


class DomainError(DPBayesError, ValueError):
    """A parameter lies outside the model's parameter domain"""


class PreconditionError(DPBayesError, ValueError):
    """A privacy lemma was invoked outside the range where it holds"""


class PrivacyGateError(DPBayesError):
    """A private run was refused because its privacy condition fails"""


class SamplerError(DPBayesError, RuntimeError):
    """A chain produced non-finite values or diverged"""

    def __init__(self, message: str, state: Optional[dict] = None):
        super().__init__(message)
        self.state = state or {}


class OptimizationError(DPBayesError, RuntimeError):
    """The ERM optimizer did not converge"""

    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


class ParseError(DPBayesError, ValueError):
    """An input file line could not be parsed"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class SchemaError(DPBayesError, ValueError):
    """Parsed data does not fit the expected schema"""

"""Shared error taxonomy. Every module raises from this tree so the CLI
can map failures to named exit diagnostics."""


class PreflabError(Exception):
    """Base class for all package errors."""


class ShapeError(PreflabError):
    """Tensor/array dimensions violate an op contract."""


class ContractError(PreflabError):
    """A precondition of an operation was violated."""


class StateError(PreflabError):
    """Operation invoked in an invalid state (e.g. backward without reset)."""


class NumericError(PreflabError):
    """NaN/Inf encountered; carries the offending graph node when known."""

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id


class ConfigError(PreflabError):
    """Invalid model or run configuration."""


class CheckpointError(PreflabError):
    """Checkpoint file malformed or inconsistent with the config."""


class ParseError(PreflabError):
    """Malformed dataset record; carries the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class IntegrityError(PreflabError):
    """Dataset references or metadata are inconsistent."""


class LengthMismatchError(PreflabError):
    """State and action sequences differ in length."""


class NonFiniteValueError(PreflabError):
    """Trajectory features contain NaN/Inf."""


class RenderLengthError(PreflabError):
    """Render point list does not match the trajectory length."""


class GenerationError(PreflabError):
    """Synthetic environment could not produce valid episodes."""


class UnsupportedVariantError(PreflabError):
    """Operation does not apply to the given model variant."""


class UnsupportedEnvError(PreflabError):
    """Operation does not apply to the given environment."""


class UndefinedCorrelationError(PreflabError):
    """Pearson correlation requested for a constant input."""

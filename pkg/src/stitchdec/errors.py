"""Exception types shared across the decoder."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its contract."""


class UtteranceExhausted(ContractViolation):
    """Raised when asked to advance past the final encoder block."""


class ScenarioFormatError(ValueError):
    """A scenario file could not be parsed or failed validation.

    The message names the offending field path (and line, for syntax errors).
    """

"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so each class carries the code
it should surface as.
"""


class BrainOFError(Exception):
    exit_code = 1


class InputError(BrainOFError, ValueError):
    """Malformed or out-of-range input."""


class DimensionError(InputError):
    """Operand shapes do not agree."""


class DegenerateMaskError(InputError):
    """An attention row has no unmasked entry."""


class CapacityError(InputError):
    """A token sequence does not fit into ``max_seq_len``."""

    def __init__(self, required, capacity):
        super().__init__(
            f"sequence needs {required} tokens but max_seq_len is {capacity}"
        )
        self.required = required
        self.capacity = capacity


class ConfigError(InputError):
    """Invalid configuration value or unknown key."""


class NumericError(BrainOFError, FloatingPointError):
    """A non-finite value appeared where finite values are required."""

    exit_code = 2


class DivergenceError(NumericError):
    def __init__(self, step, message="non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step

"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto process exit codes, so every failure raised by
library code should be one of the three leaf categories below.
"""


class GrainSynthError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GrainSynthError):
    """Caller violated a documented precondition (bad value, bad shape, bad flag)."""


class GenerationError(GrainSynthError):
    """A generative procedure could not produce a result (exhausted attempts,
    saturated rejection sampling)."""


class InputOutputError(GrainSynthError):
    """A file could not be read or written, or its format is unsupported."""

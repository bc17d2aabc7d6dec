"""Exception hierarchy.

The CLI maps these onto exit codes: ``InputError`` -> 2,
``ValidationError`` -> 3, ``AlgorithmError`` -> 4.
"""


class HsiError(Exception):
    pass


class InputError(HsiError):
    """A file could not be read or is malformed."""


class ValidationError(HsiError, ValueError):
    """Arguments violate a documented precondition."""


class AlgorithmError(HsiError):
    """A processing step could not produce a result from valid inputs."""


class RangeError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class SceneSpecError(ValidationError):
    def __init__(self, message, line=None, index=None):
        self.line = line
        self.index = index
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyPlanError(ValidationError):
    pass


class CubeFormatError(InputError):
    pass


class BadMagicError(CubeFormatError):
    pass


class TruncatedCubeError(CubeFormatError):
    pass


class WavelengthOrderError(CubeFormatError):
    pass


class PnmFormatError(InputError):
    pass


class NoStripeError(AlgorithmError):
    pass


class NoSignalError(AlgorithmError):
    pass


class ReconstructionError(AlgorithmError):
    pass


class EmptyReconstructionError(ReconstructionError):
    pass


class RegionTooSmallError(AlgorithmError):
    pass


class DegenerateError(AlgorithmError, ValueError):
    pass

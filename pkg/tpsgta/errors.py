class TpsGtaError(Exception):
    """Base class for every error raised by tpsgta"""


class ShapeError(TpsGtaError, ValueError):
    """An array did not have the dimensions an operation requires"""


class CapacityError(ShapeError):
    """A sequence is longer than a fixed-size table can hold"""


class UsageError(TpsGtaError, ValueError):
    """An operation was called with an invalid mode, flag or argument"""


class CompositionError(TpsGtaError, ValueError):
    """A layer plan or model composition is not valid"""


class DataError(TpsGtaError):
    """Input data could not be read or does not fit the request"""


class ParseError(DataError):
    """A .ts file line could not be parsed"""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class StructureError(DataError):
    """A .ts file is well formed but structurally inconsistent or unsupported"""


class LabelError(DataError):
    """A sample carries a class label that was not declared"""


class CheckpointError(DataError):
    """A checkpoint archive is unreadable, corrupted or incomplete"""


class NumericalError(TpsGtaError, ArithmeticError):
    """A computation produced a non-finite value"""


class DivergenceError(NumericalError):
    """The training loss became NaN or infinite"""

    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        super().__init__(message)

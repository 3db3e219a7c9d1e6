"""Exception hierarchy. ``exit_code`` is what the CLI returns for each category."""


class SimpError(Exception):
    exit_code = 1


class StructuralError(SimpError):
    """Shapes or layer dimensions that do not fit together."""

    exit_code = 3


class InputError(SimpError, ValueError):
    exit_code = 2


class SchemaError(InputError):
    """A data file is missing a required column or declares the wrong layout."""


class LabelingError(InputError):
    pass


class SplitError(InputError):
    pass


class NumericError(SimpError, ArithmeticError):
    exit_code = 3


class TrainingError(NumericError):
    """Training produced a non-finite loss or gradient.

    ``model`` holds the last finite checkpoint, when one exists.
    """

    def __init__(self, message, model=None, batch=None):
        super().__init__(message)
        self.model = model
        self.batch = batch

"""Error types shared by the model, training, data and CLI layers."""


class OFNNError(Exception):
    """Base error. ``exit_code`` is what the CLI returns when this escapes a command."""

    exit_code = 1


class ConfigError(OFNNError):
    """Run configuration failed validation."""

    exit_code = 2


class InvalidInputError(OFNNError, ValueError):
    """Shapes, labels or arguments inconsistent with the model or dataset."""

    exit_code = 2


class DataError(OFNNError):
    """A dataset file is missing or malformed."""

    exit_code = 3


class IdxFormatError(DataError):
    """Base for IDX parse failures."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class Har2FormatError(DataError):
    """Ragged rows, non-numeric fields or unknown labels in HAR-2 text files."""


class NumericFailure(OFNNError, ArithmeticError):
    """A non-finite value showed up in the forward pass, loss or gradients."""

    exit_code = 4

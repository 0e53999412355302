"""Exception hierarchy shared across the package.

Three families map onto the CLI exit codes: ConfigError (2), DataError (3)
and NumericError (4).
"""


class HierriskError(Exception):
    """Base class for all package errors."""


class ConfigError(HierriskError):
    """Invalid run configuration (bad enum value, missing file, missing seed)."""


class DataError(HierriskError):
    """Invalid input data."""


class NumericError(HierriskError):
    """Numerical failure during fitting or decomposition."""


# --- ingestion / validation -------------------------------------------------

class MalformedRow(DataError):
    def __init__(self, row, message):
        super().__init__(f"row {row}: {message}")
        self.row = row


class UnknownCategory(MalformedRow):
    def __init__(self, row, path):
        DataError.__init__(self, f"row {row}: category path {path!r} not in hierarchy")
        self.row = row
        self.path = path


class NonPositiveMass(MalformedRow):
    def __init__(self, row, value):
        DataError.__init__(self, f"row {row}: salary_mass must be > 0, got {value}")
        self.row = row


class NegativeAmount(MalformedRow):
    def __init__(self, row, value):
        DataError.__init__(self, f"row {row}: claim_amount must be >= 0, got {value}")
        self.row = row


# --- embeddings -------------------------------------------------------------

class DimensionMismatch(DataError):
    pass


class DuplicateKey(DataError):
    pass


class ZeroVector(DataError):
    pass


class MissingEmbedding(DataError):
    pass


class MissingEffect(DataError):
    pass


class NoUsableTokens(DataError):
    pass


# --- clustering / indices ---------------------------------------------------

class KTooLarge(DataError):
    pass


class EmptyInput(DataError):
    pass


class KOutOfRange(DataError):
    pass


class IsolatedVertex(DataError):
    pass


# --- numerics ---------------------------------------------------------------

class SingularSystem(NumericError):
    pass


class EigensolverFailure(NumericError):
    pass


class ZeroFitted(NumericError):
    pass

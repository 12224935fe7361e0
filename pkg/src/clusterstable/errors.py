"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: input and parameter
problems exit with code 2, numerical or degeneracy failures with code 3.
"""


class ClusterStableError(Exception):
    """Base class for every error raised by this package."""


# --- input / parameter problems (CLI exit code 2) ---


class DataError(ClusterStableError):
    """Malformed or unusable input data."""


class EmptyFile(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"required column {column!r} not found in header")


class NonNumericCell(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(
            f"non-numeric value {value!r} in column {column!r} at file row {row}"
        )


class SingleCluster(DataError):
    pass


class ParameterError(ClusterStableError):
    """Arguments outside the documented domain."""


class AlphaOutOfRange(ParameterError):
    pass


class TooFewClusters(ParameterError):
    pass


class InvalidGrid(ParameterError):
    pass


# --- numerical / degeneracy failures (CLI exit code 3) ---


class NumericalError(ClusterStableError):
    pass


class SingularGram(NumericalError):
    def __init__(self, condition_number: float, context: str = "gram matrix"):
        self.condition_number = condition_number
        super().__init__(
            f"{context} is numerically singular "
            f"(condition number {condition_number:.3e} >= 1e12)"
        )


class SingularLeaveOneOutGram(SingularGram):
    def __init__(self, condition_number: float, cluster_id: str):
        self.cluster_id = cluster_id
        super().__init__(
            condition_number, context=f"leave-one-out gram without cluster {cluster_id!r}"
        )


class ZeroStandardError(NumericalError):
    pass


class ZeroSigma(NumericalError):
    """A subsample produced a zero scale estimate; the draw is degenerate."""


class TooManyDegenerateDraws(NumericalError):
    pass


class TooManySingularResamples(NumericalError):
    pass


class ZeroDenominator(NumericalError):
    pass


class GiantCluster(NumericalError):
    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"drawn cluster size {size} exceeds the safety cap {cap}")


class TooManyDegenerateReplications(NumericalError):
    pass

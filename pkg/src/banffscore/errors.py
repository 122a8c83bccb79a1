"""Exception types shared across the package."""


class BanffScoreError(Exception):
    """Base class for all errors raised by this package."""


class MalformedDocument(BanffScoreError):
    """Input bytes are not a valid document of the expected kind."""


class SchemaViolation(BanffScoreError):
    """Document parses but violates the detection schema."""


class DegenerateGeometry(BanffScoreError):
    """Ring with fewer than 3 distinct vertices, zero area, or self-intersection."""


class GradeOutOfRange(BanffScoreError):
    """A ground-truth grade value is not an integer in 0..3."""


class IndexMismatch(BanffScoreError):
    """Spatial index was built over a different instance set than supplied."""


class PlacementFailure(BanffScoreError):
    """Non-overlapping instance placement could not be satisfied."""


class EmptyMatrix(BanffScoreError):
    """Agreement summary requested for a confusion matrix with no included pairs."""


class ConfigError(BanffScoreError):
    """Invalid run configuration value or config-file line."""

"""Exception hierarchy shared by every datadiet module."""


class DatadietError(Exception):
    """Base class for all errors raised by datadiet."""


class VolumeIOError(DatadietError, OSError):
    """Reading or writing a volume file failed (missing, truncated, unwritable)."""


class NotNiftiError(DatadietError):
    pass


class UnsupportedDatatypeError(DatadietError):
    pass


class DimensionError(DatadietError):
    pass


class InvalidGridError(DatadietError, ValueError):
    pass


class AmbiguousOrientationError(DatadietError):
    pass


class LabelInterpolationError(DatadietError, ValueError):
    pass


class ShapeMismatchError(DatadietError, ValueError):
    pass


class OutOfRangeProbabilityError(DatadietError, ValueError):
    pass


class MalformedIdError(DatadietError, ValueError):
    pass


class EmptyInputError(DatadietError, ValueError):
    pass


class MissingMetricsError(DatadietError):
    def __init__(self, sample_ids, field="loss"):
        self.sample_ids = list(sample_ids)
        self.field = field
        shown = ", ".join(self.sample_ids[:10])
        more = f" (+{len(self.sample_ids) - 10} more)" if len(self.sample_ids) > 10 else ""
        super().__init__(f"missing {field} for: {shown}{more}")


class MissingLabelsError(DatadietError):
    def __init__(self, sample_ids):
        self.sample_ids = list(sample_ids)
        super().__init__("is_sick unknown for: " + ", ".join(self.sample_ids))


class PercentileOutOfRangeError(DatadietError, ValueError):
    pass


class EmptyDistributionError(DatadietError, ValueError):
    pass


class EmptySelectionError(DatadietError, ValueError):
    pass


class LesionOutOfBoundsError(DatadietError, ValueError):
    pass

"""Exception hierarchy shared by every stage."""


class OctdsError(Exception):
    """Base class; ``stage`` is filled in by the CLI when propagating."""

    kind = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.kind, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if _jsonable(v)})
        return out


def _jsonable(v):
    return isinstance(v, (str, int, float, bool, list, tuple, dict, type(None)))


class ValidationError(OctdsError, ValueError):
    kind = "validation_error"

    def __init__(self, message, field=None, **details):
        super().__init__(message, field=field, **details)
        self.field = field


class ConfigurationError(OctdsError, ValueError):
    kind = "configuration_error"


class FormatError(OctdsError, ValueError):
    kind = "format_error"


class StackIOError(OctdsError, OSError):
    kind = "io_error"

    def __init__(self, message, slice_index=None, **details):
        super().__init__(message, slice_index=slice_index, **details)
        self.slice_index = slice_index


class PixelRangeError(OctdsError, ValueError):
    kind = "range_error"


class DegenerateInputError(OctdsError, ValueError):
    kind = "degenerate_input"


class NoBorderCandidatesError(OctdsError):
    kind = "no_border_candidates"


class InsufficientDataError(OctdsError, ValueError):
    kind = "insufficient_data"


class FitRejectedError(OctdsError):
    """Raised when RANSAC consensus is too small; ``report`` holds the best effort."""

    kind = "fit_rejected"

    def __init__(self, message, report):
        super().__init__(message, inlier_fraction=report.inlier_fraction)
        self.report = report

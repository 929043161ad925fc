"""Exception taxonomy for the pipeline.

Three families matter to callers: configuration problems (the request
itself is wrong), data-format problems (the input files are malformed),
and data-content problems (well-formed input that cannot support the
requested computation). The CLI maps these to distinct exit codes.
"""

from __future__ import annotations


class CtxSenseError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CtxSenseError):
    """A configuration value or override is invalid."""


class SpecError(ConfigError):
    """A filter or analysis specification violates its constraints."""


class DataFormatError(CtxSenseError):
    """Input files are malformed or internally inconsistent."""


class ParseError(DataFormatError):
    """A sensor or timeline file could not be parsed."""


class SchemaError(DataFormatError):
    """A file parsed but its header or shape contradicts the sensor kind."""


class TimelineError(DataFormatError):
    """Timeline rows overlap, repeat, or violate ordering rules."""


class CoverageError(DataFormatError):
    """A timeline interval is not fully covered by a sensor stream."""


class DataContentError(CtxSenseError):
    """Well-formed data that cannot support the requested computation."""


class FilterError(DataContentError):
    """A signal segment is too short for the requested filter."""


class InsufficientDataError(DataContentError):
    """Too few samples or beats to compute a quantity."""


class EmptyAfterCleaningError(DataContentError):
    """Beat-interval cleaning removed every interval."""


class AssemblyError(DataContentError):
    """Feature rows cannot be assembled into a single matrix."""


class TaskConstructionError(DataContentError):
    """A classification task would have an empty class."""


class TrainError(DataContentError):
    """Training data cannot produce a usable model."""


class MetricError(DataContentError):
    """A requested metric is undefined for the given labels."""


class DegenerateError(DataContentError):
    """A statistical test has no information to work with."""


class ClusterError(DataContentError):
    """Too few points to run the requested clustering."""

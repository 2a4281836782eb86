"""Error families. The CLI maps each family to a fixed exit code."""

from __future__ import annotations


class PidTwinError(ValueError):
    """Base class of every error raised on purpose by the pipeline."""

    exit_code = 3


class ConfigError(PidTwinError):
    """Configuration file missing, unreadable or invalid."""

    exit_code = 1


class InputError(PidTwinError):
    """Input plan, annotation or evaluation file cannot be used."""

    exit_code = 2


class PipelineError(PidTwinError):
    """A pipeline stage could not produce its output."""

    exit_code = 3


class UnreadableFile(InputError):
    pass


class UnsupportedFormat(InputError):
    pass


class SchemaViolation(InputError):
    pass


class BoxOutOfBounds(InputError):
    pass


class InvalidTiling(PipelineError):
    pass


class OutOfTile(PipelineError):
    pass


class EmptyTemplateSet(PipelineError):
    pass


class UnmappedClass(PipelineError):
    pass


class TemplateFieldUnknown(PipelineError):
    pass


class SymbolSetMismatch(PipelineError):
    pass


class InfeasibleLayout(PipelineError):
    pass

"""Typed errors shared across the package."""


class McgradError(Exception):
    """Base class for package errors."""


class CapabilityError(McgradError):
    """An operation was requested that the measure does not support."""


class DomainError(McgradError):
    """A point lies outside the domain of a density or transform."""


class ConfigError(McgradError):
    """Invalid or incomplete configuration."""


class SamplerError(McgradError):
    """A sampler failed, e.g. a rejection loop exceeded its iteration cap."""

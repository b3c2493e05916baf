"""Semantic exception hierarchy shared across modules."""


class GwtrapError(Exception):
    """Base class for all package errors."""


class NotSupercritical(GwtrapError):
    """Offspring mean <= 1 where a supercritical law is required."""


class NoRoot(GwtrapError):
    """A root solver has no root in its admissible range."""


class TrapTooLarge(GwtrapError):
    """A sampled trap exceeded the vertex cap (misconfiguration guard)."""


class StepBudgetExceeded(GwtrapError):
    """A walk ran out of steps; partial results carry a censored flag."""


class TooFewSamples(GwtrapError):
    """An estimator received fewer samples than its contract requires."""


class InsufficientRegenerations(GwtrapError):
    """Fewer confirmed regeneration blocks than the estimator needs."""


class NonFinite(GwtrapError):
    """An absorption solve has no finite solution."""


class ConfigError(GwtrapError):
    """Experiment configuration is invalid; message names the field."""

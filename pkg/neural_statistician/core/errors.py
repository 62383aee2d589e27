# neural_statistician/core/errors.py
"""Root exception shared by every module; subclasses live next to their raisers."""


class StatisticianError(Exception):
    """Base class for all errors raised by this package."""

"""Multi-view remote photoplethysmography toolkit with a synthetic three-view benchmark."""

from .errors import ConfigError, DataError, MvrppgError, NumericError
from .sigproc import MetricsReport, Spectrum, TimeSeries

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "MetricsReport", "MvrppgError", "NumericError", "Spectrum", "TimeSeries"]

"""Probabilistic net-load forecasting with quantile regression and GPD tails."""

from .dist import ForecastSeries, GpdParams, QuantileCurve, SplicedForecast

__version__ = "0.1.0"
__all__ = ["ForecastSeries", "GpdParams", "QuantileCurve", "SplicedForecast", "__version__"]

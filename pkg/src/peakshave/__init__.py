"""Peak-hour load curve forecasting with stacked autoencoders and battery peak shaving."""

__version__ = "0.1.0"

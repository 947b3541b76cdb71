"""Configuration, data ingestion, synthetic data, backtesting and CLI."""

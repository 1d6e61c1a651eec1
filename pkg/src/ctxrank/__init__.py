"""Context-aware product ranking: data pipeline, gradient boosting,
similarity-based re-ranking, MRR evaluation, and Bayesian tuning."""

__version__ = "0.1.0"

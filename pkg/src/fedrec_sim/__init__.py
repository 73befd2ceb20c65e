"""Federated matrix-factorization recommendation with model-poisoning attacks."""

__version__ = "0.1.0"

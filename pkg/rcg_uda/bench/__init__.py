"""Synthetic cross-domain ordinal benchmark, metrics and arm comparison."""

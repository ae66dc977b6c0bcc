"""Phoneme-aware out-of-vocabulary word representations for Korean."""

__version__ = "0.1.0"

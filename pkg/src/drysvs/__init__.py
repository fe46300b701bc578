"""Dry singing voice separation: mixtures, mel-domain separator, metrics."""

__version__ = "0.1.0"

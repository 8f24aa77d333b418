"""skyforge: language-conditioned drone demonstration synthesis."""

__version__ = "0.1.0"

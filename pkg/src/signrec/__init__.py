"""Sign recognition with language-assisted training on synthetic data."""

__version__ = "0.1.0"

"""Speaker attribution on top of a frozen ASR provider."""

__version__ = "0.1.0"

"""Question answering over tables with linked passages under distant supervision."""

__version__ = "0.1.0"

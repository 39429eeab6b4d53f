"""Progressive attention-guided depth super-resolution."""

__version__ = "0.1.0"

"""Joint optimization of an electric AMoD fleet and unbalanced distribution feeders."""

__version__ = "0.1.0"

"""SAM-enhanced poisoned-sample detection laboratory."""

__version__ = "0.1.0"

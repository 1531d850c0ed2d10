"""Universal pooling for CNNs on a small numpy autodiff framework."""

__version__ = "0.1.0"

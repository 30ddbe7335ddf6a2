"""Object-centric Gaussian splatting reconstruction and plant trait extraction."""

__version__ = "0.1.0"

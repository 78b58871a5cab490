"""islekit: offline data-driven evolutionary optimization on surrogate islands."""

__version__ = "0.1.0"

from .core import Bounds, RngStream, clamp, derive_stream

__all__ = ["Bounds", "RngStream", "clamp", "derive_stream", "__version__"]

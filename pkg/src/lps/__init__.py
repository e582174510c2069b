"""Open-world semi-supervised learning with learning-pace synchronization."""
from lps.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

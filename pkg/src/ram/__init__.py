"""RAM: efficient all-in-one image restoration with skip-split gated blocks."""

__version__ = "0.1.0"

from .tensor import GradTape, Tensor  # noqa: F401

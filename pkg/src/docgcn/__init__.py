"""Document-level relation extraction with a labelled-edge GCNN."""

__version__ = "0.1.0"

from .kernels import backend_name

__all__ = ["__version__", "backend_name"]

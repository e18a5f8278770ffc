"""spectra-kit: spectrum topology and AR data on finite stable category data."""

from .core import ExactMatrix, FieldSpec, InputError, SpectraError

__version__ = "0.1.0"

__all__ = ["ExactMatrix", "FieldSpec", "InputError", "SpectraError", "__version__"]

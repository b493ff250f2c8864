"""Self-supervised purification of bulk tumor expression profiles.

Adjacent-normal profiles are used as structured distortions in a
Barlow-Twins style objective; the resulting low-dimensional tumor
embeddings are benchmarked with dilution series, interpreted through
per-dimension gene rankings and validated with survival models.
"""

from twinpurify.errors import (
    ConvergenceError,
    NumericalError,
    TwinPurifyError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "NumericalError",
    "TwinPurifyError",
    "ValidationError",
    "__version__",
]

"""Extract weights and calibration activations from saved torch modules."""

from .exporter import DEFAULT_EXCLUDES, ExportError, ExportSpec, export_model
from .sltn import sltn_bytes

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_EXCLUDES",
    "ExportError",
    "ExportSpec",
    "export_model",
    "sltn_bytes",
    "__version__",
]

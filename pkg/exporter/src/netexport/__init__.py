"""Convert PyTorch checkpoints to the neutral network.json format."""

__version__ = "0.1.0"

from .convert import ExportError, UnsupportedLayers, export
from .verify import VerifyReport, verify

__all__ = ["export", "verify", "VerifyReport", "ExportError", "UnsupportedLayers", "__version__"]

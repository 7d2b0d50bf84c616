"""Export description embeddings in the detector's embedding-file format."""

__version__ = "0.1.0"

from .export import ExportError, ExportJob, export

__all__ = ["ExportError", "ExportJob", "export", "__version__"]

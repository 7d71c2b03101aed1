"""Bridge from image-folder datasets to ESB1 embedding stores."""

from .encoder import ClipEncoder
from .export import ExportError, ExportJob, export, format_prompt, scan_image_root
from .esb_writer import WriteError, write_store

__all__ = [
    "ClipEncoder",
    "ExportError",
    "ExportJob",
    "WriteError",
    "export",
    "format_prompt",
    "scan_image_root",
    "write_store",
]

__version__ = "0.1.0"

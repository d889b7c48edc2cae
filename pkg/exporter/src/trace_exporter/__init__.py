"""Host-side activation exporter.

Registers forward hooks on named layers of a torch model, runs an image
directory through it, and writes activation traces in the interchange
format (one float32 NPY per image/layer plus a JSON manifest) that the
defense pipeline's calibration and heatmap stages ingest.
"""

from .export import ExportError, ExportManifest, export_traces, validate_export

__all__ = ["ExportError", "ExportManifest", "export_traces", "validate_export"]

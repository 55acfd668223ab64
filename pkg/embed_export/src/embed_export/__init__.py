"""Batch exporter: run a music encoder over corpus clips, mean-pool each
hidden layer over time, and write one LSTK embedding file per clip."""

from .encoders import EncoderLoadError, available_encoders, load_encoder
from .export import ExportError, ExportJob, export_embeddings

__all__ = [
    "EncoderLoadError",
    "ExportError",
    "ExportJob",
    "available_encoders",
    "export_embeddings",
    "load_encoder",
]

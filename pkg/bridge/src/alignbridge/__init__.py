"""Bridge from the pretrained-model ecosystem into alignkit's formats.

Exports BERT-family encoder weights (plus identity-initialized adapter
slots) and per-layer contextual embeddings for a parallel corpus into
the flat named-tensor container the alignment toolkit consumes, along
with the JSONL corpus and a checksummed manifest.
"""

from .errors import BridgeError, DataError, ExportError, UsageError
from .export import export_embeddings, export_weights, load_backbone
from .manifest import verify_manifest

__all__ = [
    "BridgeError",
    "DataError",
    "ExportError",
    "UsageError",
    "export_embeddings",
    "export_weights",
    "load_backbone",
    "verify_manifest",
]

__version__ = "0.1.0"

"""Export manifests: what was exported, from which model, with checksums.

A manifest lives next to the files it describes; checksums are over file
bytes (sha256), so a manifest that verifies pins the export exactly.
"""

import hashlib
import json
from pathlib import Path

from .errors import ExportError

MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def tokenizer_fingerprint(tokenizer) -> str:
    """Stable digest of the vocabulary and special tokens."""
    vocab = sorted(tokenizer.get_vocab().items())
    payload = json.dumps(
        {"vocab": vocab, "cls": tokenizer.cls_token_id, "sep": tokenizer.sep_token_id},
        ensure_ascii=False,
    )
    return "sha256:" + hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_manifest(kind, model_name, revision, num_layers, layers, tokenizer,
                   special_policy, out_dir, files, extra=None) -> dict:
    layers = sorted(int(k) for k in layers)
    if layers and not (0 <= layers[0] and layers[-1] <= num_layers):
        raise ExportError(
            f"layer list {layers} outside model depth 0..{num_layers}"
        )
    out_dir = Path(out_dir)
    manifest = {
        "kind": kind,
        "model": {"name": model_name, "revision": revision},
        "num_layers": num_layers,
        "layers": layers,
        "tokenizer": {
            "fingerprint": tokenizer_fingerprint(tokenizer),
            "cls_id": tokenizer.cls_token_id,
            "sep_id": tokenizer.sep_token_id,
        },
        "special_tokens": special_policy,
        "files": {name: file_sha256(out_dir / name) for name in sorted(files)},
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(manifest: dict, out_dir) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def verify_manifest(path) -> dict:
    """Re-hash every listed file and re-check the layer bounds.

    Returns the parsed manifest; raises ExportError on any mismatch.
    """
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ExportError(f"cannot read manifest {path}: {e}") from None
    base = path.parent
    for name, digest in manifest.get("files", {}).items():
        target = base / name
        if not target.exists():
            raise ExportError(f"manifest lists missing file {name!r}")
        actual = file_sha256(target)
        if actual != digest:
            raise ExportError(
                f"checksum mismatch for {name!r}: manifest {digest}, file {actual}"
            )
    layers = manifest.get("layers", [])
    depth = manifest.get("num_layers")
    if layers and depth is not None and (min(layers) < 0 or max(layers) > depth):
        raise ExportError(f"layer list {layers} outside model depth 0..{depth}")
    return manifest

"""Model checkpoints: text manifest plus raw little-endian float32 blob.

Layout (single file):

    spjscc-checkpoint v1
    kind <model kind>
    meta <key> <value>            # zero or more
    hash <sha256 of blob>
    tensor <name> <d0,d1,...> <offset> <nbytes>   # one per tensor, sorted
    blob <total bytes>
    <raw bytes>

The blob hash is verified on load; save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

FORMAT_LINE = "spjscc-checkpoint v1"


class CheckpointError(ValueError):
    """Unreadable, truncated, or corrupted checkpoint."""


def save_checkpoint(params: dict[str, np.ndarray], kind: str, path: str | Path, meta: dict[str, str] | None = None) -> None:
    names = sorted(params)
    blobs = [np.ascontiguousarray(params[n], dtype="<f4").tobytes() for n in names]
    offsets = np.cumsum([0] + [len(b) for b in blobs])
    blob = b"".join(blobs)
    lines = [FORMAT_LINE, f"kind {kind}"]
    for key in sorted(meta or {}):
        value = str((meta or {})[key])
        if any(c.isspace() for c in value):
            raise CheckpointError(f"meta value for {key!r} must not contain whitespace")
        lines.append(f"meta {key} {value}")
    lines.append(f"hash {hashlib.sha256(blob).hexdigest()}")
    for i, name in enumerate(names):
        dims = ",".join(str(d) for d in params[name].shape)
        lines.append(f"tensor {name} {dims} {offsets[i]} {len(blobs[i])}")
    lines.append(f"blob {len(blob)}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(blob)


def load_checkpoint(path: str | Path, expected_kind: str | None = None):
    """Returns (params, kind, meta). Verifies format version and blob hash."""
    raw = Path(path).read_bytes()
    header_end = 0
    lines = []
    while True:
        nl = raw.find(b"\n", header_end)
        if nl < 0:
            raise CheckpointError(f"{path}: header never terminated")
        line = raw[header_end:nl].decode("ascii")
        header_end = nl + 1
        lines.append(line)
        if line.startswith("blob "):
            break
    if lines[0] != FORMAT_LINE:
        raise CheckpointError(f"{path}: format version mismatch: {lines[0]!r} (want {FORMAT_LINE!r})")
    kind = None
    meta: dict[str, str] = {}
    blob_hash = None
    tensors = []
    for line in lines[1:]:
        tag, _, rest = line.partition(" ")
        if tag == "kind":
            kind = rest
        elif tag == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif tag == "hash":
            blob_hash = rest
        elif tag == "tensor":
            fields = rest.split(" ")
            if len(fields) != 4:
                raise CheckpointError(f"{path}: malformed tensor line {line!r}")
            name, dims, offset, nbytes = fields
            tensors.append((name, dims, int(offset), int(nbytes)))
        elif tag == "blob":
            blob_len = int(rest)
    blob = raw[header_end:]
    if len(blob) != blob_len:
        raise CheckpointError(f"{path}: blob truncated at byte {header_end + len(blob)} (expected {blob_len} blob bytes, got {len(blob)})")
    if blob_hash != hashlib.sha256(blob).hexdigest():
        raise CheckpointError(f"{path}: blob hash mismatch")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: checkpoint kind {kind!r} is not {expected_kind!r}")
    params = {}
    for name, dims, offset, nbytes in tensors:
        shape = tuple(int(d) for d in dims.split(","))
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f4")
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: tensor {name} has {arr.size} values for shape {shape}")
        params[name] = arr.reshape(shape).copy()
    return params, kind, meta

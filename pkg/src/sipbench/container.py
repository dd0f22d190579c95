"""Binary container used for datasets and checkpoints.

Layout (all integers little-endian):

    bytes 0..7    magic ``SIPBENCH``
    bytes 8..11   format version, uint32
    bytes 12..19  header length in bytes, uint64
    header        UTF-8 JSON document
    payload       raw little-endian 32-bit floats

The header carries everything needed to interpret the payload (shape,
dtype tag ``f32le``, field names, provenance). Payload ordering is the C
order of the declared shape.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContainerFormatError

MAGIC = b"SIPBENCH"
VERSION = 1
DTYPE_TAG = "f32le"


def write_container(path, header: dict, payload: np.ndarray) -> None:
    """Write ``payload`` under ``header`` to ``path``.

    The payload is flattened in C order and stored as little-endian
    float32 regardless of input dtype. The header gains ``dtype`` and
    ``payload_size`` keys.
    """
    flat = np.ascontiguousarray(payload, dtype="<f4").ravel()
    doc = dict(header)
    doc["dtype"] = DTYPE_TAG
    doc["payload_size"] = int(flat.size)
    header_bytes = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(flat.tobytes())


def read_container(path) -> tuple[dict, np.ndarray]:
    """Read a container; returns (header, flat float32 payload)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise ContainerFormatError(f"{path}: not a container file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise ContainerFormatError(f"{path}: unsupported container version {version}")
    (header_len,) = struct.unpack_from("<Q", data, 12)
    header_end = 20 + header_len
    if header_end > len(data):
        raise ContainerFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[20:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError(f"{path}: invalid header JSON ({exc})") from exc
    payload = np.frombuffer(data[header_end:], dtype="<f4")
    expected = header.get("payload_size")
    if expected is not None and payload.size != expected:
        raise ContainerFormatError(
            f"{path}: payload has {payload.size} floats, header declares {expected}"
        )
    return header, payload

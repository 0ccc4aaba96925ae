"""Deterministic binary container: magic, JSON header, then ``.npy`` blobs.

Unlike ``np.savez`` (a zip archive stamped with the current time), the same
header and arrays always produce the same bytes.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPDELAB\x00"
FORMAT_VERSION = 1


def dumps(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    names = sorted(arrays)
    head = dict(header, format_version=FORMAT_VERSION, arrays=names)
    text = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(text)))
    buf.write(text)
    for name in names:
        np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]),
                                  allow_pickle=False)
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError("not a container file (bad magic)")
    buf = io.BytesIO(data)
    buf.seek(len(MAGIC))
    (size,) = struct.unpack("<Q", buf.read(8))
    header = json.loads(buf.read(size))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {header.get('format_version')}")
    arrays = {name: np.lib.format.read_array(buf, allow_pickle=False)
              for name in header["arrays"]}
    return header, arrays


def save(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(header, arrays))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())

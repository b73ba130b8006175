"""Flat binary container shared by network checkpoints and datasets.

Layout of a file::

    <one line of UTF-8 JSON>\\n<raw little-endian float64 payload>

The JSON header carries ``format``, free-form ``meta`` and an ``arrays`` list
of ``{"name", "shape", "offset"}`` entries.  ``offset`` counts float64
elements from the start of the payload; arrays are stored C-order.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT = "looprl-flat/1"


def write_arrays(path: str | Path, arrays: Mapping[str, np.ndarray],
                 meta: Mapping[str, Any] | None = None) -> None:
    entries = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        offset += flat.size
        chunks.append(flat)
    header = {"format": FORMAT, "meta": dict(meta or {}), "arrays": entries, "count": offset}
    line = json.dumps(header, sort_keys=True).encode("utf-8")
    if b"\n" in line:
        raise ValueError("header must serialize to a single line")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(line + b"\n")
        for chunk in chunks:
            f.write(chunk.tobytes())


def read_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a file written by :func:`write_arrays`.

    Returns:
        ``(arrays, meta)``. Raises ``ValueError`` on a malformed file.
    """
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt header") from exc
    if header.get("format") != FORMAT:
        raise ValueError(f"{path}: unknown format {header.get('format')!r}")
    payload = raw[newline + 1:]
    if len(payload) != 8 * header["count"]:
        raise ValueError(f"{path}: payload size {len(payload)} does not match header")
    data = np.frombuffer(payload, dtype="<f8")
    arrays = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arrays[entry["name"]] = data[start:start + size].reshape(entry["shape"]).astype(np.float64)
    return arrays, header["meta"]

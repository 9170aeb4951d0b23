"""Sectioned binary container: a text header then little-endian raw arrays.

Layout::

    GLOTC <version>
    meta <one-line JSON>
    arrays <count>
    <name> <dtype> <comma-separated shape, '-' for scalars>
    ...
    END
    <raw payload, arrays back to back in header order>

Names conventionally carry a section prefix (``body_model/...``, ``gmm/...``).
Header integers are decimal text.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import CorruptFile, VersionMismatch

MAGIC = "GLOTC"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "u1"}


def write_container(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    lines = [f"{MAGIC} {VERSION}", "meta " + json.dumps(meta or {}, sort_keys=True),
             f"arrays {len(arrays)}"]
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dname = arr.dtype.name
        if dname not in _DTYPES:
            raise TypeError(f"unsupported dtype {dname} for {name}")
        if any(c.isspace() for c in name):
            raise ValueError(f"array name {name!r} contains whitespace")
        shape = ",".join(str(n) for n in arr.shape) if arr.ndim else "-"
        lines.append(f"{name} {dname} {shape}")
        payload.append(np.ascontiguousarray(arr, dtype=_DTYPES[dname]).tobytes())
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    end = data.find(b"\nEND\n")
    if end < 0:
        raise CorruptFile(f"{path}: header terminator missing")
    try:
        lines = data[:end].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise CorruptFile(f"{path}: header is not text") from exc
    first = lines[0].split()
    if len(first) != 2 or first[0] != MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    if first[1] != str(VERSION):
        raise VersionMismatch(f"{path}: container version {first[1]}, expected {VERSION}")
    try:
        if not lines[1].startswith("meta "):
            raise ValueError("meta line")
        meta = json.loads(lines[1][5:])
        kind, count = lines[2].split()
        if kind != "arrays" or int(count) != len(lines) - 3:
            raise ValueError("array count")
        specs = []
        for line in lines[3:]:
            name, dname, shape = line.split()
            dims = () if shape == "-" else tuple(int(n) for n in shape.split(","))
            specs.append((name, dname, dims))
    except (ValueError, IndexError) as exc:
        raise CorruptFile(f"{path}: malformed header ({exc})") from exc

    offset = end + len(b"\nEND\n")
    arrays = {}
    for name, dname, dims in specs:
        if dname not in _DTYPES:
            raise CorruptFile(f"{path}: unknown dtype {dname}")
        dt = np.dtype(_DTYPES[dname])
        nbytes = dt.itemsize * int(np.prod(dims, dtype=np.int64))
        if offset + nbytes > len(data):
            raise CorruptFile(f"{path}: payload truncated at {name}")
        arrays[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize,
                                     offset=offset).reshape(dims).astype(dname)
        offset += nbytes
    if offset != len(data):
        raise CorruptFile(f"{path}: {len(data) - offset} trailing bytes")
    return meta, arrays

"""Deterministic array containers: a JSON header plus one raw binary blob.

`write_blob(prefix, arrays, meta)` produces `<prefix>.json` and
`<prefix>.bin`. Arrays are stored little-endian, C-order, concatenated in
sorted-name order, so identical inputs yield identical bytes. float64 arrays
round-trip bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ContractViolation

_DTYPES = {"float64": "<f8", "int64": "<i8", "uint8": "|u1", "bool": "|b1"}


def write_blob(prefix, arrays: dict, meta: dict | None = None) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    header = {"meta": meta or {}, "arrays": {}}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        key = str(arr.dtype)
        if key not in _DTYPES:
            raise ContractViolation(f"write_blob: unsupported dtype {key} for {name!r}")
        raw = arr.astype(_DTYPES[key], copy=False).tobytes(order="C")
        header["arrays"][name] = {
            "dtype": key,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    with open(prefix.with_suffix(".json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(prefix.with_suffix(".bin"), "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)


def read_blob(prefix):
    prefix = Path(prefix)
    try:
        with open(prefix.with_suffix(".json")) as fh:
            header = json.load(fh)
        raw = prefix.with_suffix(".bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise ContractViolation(f"read_blob: cannot read {prefix}: {exc}") from exc
    arrays = {}
    for name, spec in header["arrays"].items():
        start, nbytes = spec["offset"], spec["nbytes"]
        arr = np.frombuffer(raw[start:start + nbytes], dtype=_DTYPES[spec["dtype"]])
        arrays[name] = arr.reshape(spec["shape"]).astype(spec["dtype"], copy=False)
    return arrays, header.get("meta", {})

"""Parameter persistence: one flat float64 stream plus a JSON sidecar.

The .bin file is the little-endian concatenation of every parameter in
sidecar order; the .json sidecar is a list of {name, shape} entries. Order
is whatever the caller's mapping yields, so containers expose ordered
`parameters()` dicts and round-trips are stable.
"""

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

__all__ = ["save_parameters", "load_parameters"]


def save_parameters(stem, named):
    """Write `<stem>.bin` and `<stem>.json` for a {name: tensor} mapping."""
    stem = Path(stem)
    entries = []
    chunks = []
    for name, value in named.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, float)
        entries.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.astype("<f8").tobytes())
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".bin").write_bytes(b"".join(chunks))
    with stem.with_suffix(".json").open("w") as fh:
        json.dump(entries, fh, indent=1)
        fh.write("\n")


def load_parameters(stem):
    """Read a mapping written by `save_parameters`, in sidecar order."""
    stem = Path(stem)
    with stem.with_suffix(".json").open() as fh:
        entries = json.load(fh)
    raw = stem.with_suffix(".bin").read_bytes()
    out = {}
    offset = 0
    for entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        out[entry["name"]] = arr.astype(np.float64).reshape(shape)
        offset += count * 8
    if offset != len(raw):
        raise ValueError(
            f"parameter stream length {len(raw)} does not match sidecar ({offset})"
        )
    return out

"""Parameter blobs: a text header of names and shapes, then little-endian float32 data.

Layout::

    TENSORS <count>
    <name> <d0> <d1> ...
    ...
    DATA
    <raw bytes, header order>
"""

from __future__ import annotations

from typing import Dict, Mapping, Tuple

import numpy as np

_DTYPE = np.dtype("<f4")


def dump_params(params: Mapping[str, np.ndarray]) -> bytes:
    lines = [f"TENSORS {len(params)}"]
    chunks = []
    for name, arr in params.items():
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"parameter name {name!r} must be non-empty without whitespace")
        arr = np.asarray(arr)
        lines.append(" ".join([name] + [str(d) for d in arr.shape]))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
    lines.append("DATA")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(chunks)


def load_params(blob: bytes) -> Tuple[Dict[str, np.ndarray], int]:
    """Parse a parameter blob; returns the arrays and the number of bytes consumed."""
    pos = 0

    def next_line() -> str:
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise ValueError("truncated parameter header")
        line = blob[pos:end].decode("ascii")
        pos = end + 1
        return line

    head = next_line().split()
    if len(head) != 2 or head[0] != "TENSORS":
        raise ValueError(f"bad parameter header {' '.join(head)!r}")
    count = int(head[1])
    specs = []
    for _ in range(count):
        parts = next_line().split()
        if not parts:
            raise ValueError("empty parameter line")
        specs.append((parts[0], tuple(int(d) for d in parts[1:])))
    if next_line() != "DATA":
        raise ValueError("missing DATA marker after parameter header")
    out: Dict[str, np.ndarray] = {}
    for name, shape in specs:
        n = int(np.prod(shape, dtype=np.int64))
        nbytes = n * _DTYPE.itemsize
        if pos + nbytes > len(blob):
            raise ValueError(f"truncated data for parameter {name}")
        out[name] = np.frombuffer(blob, dtype=_DTYPE, count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    return out, pos

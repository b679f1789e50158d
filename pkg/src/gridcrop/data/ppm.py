"""Binary PPM (P6, maxval 255) codec."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from ..geometry import ImageDims


class PPMError(ValueError):
    pass


@dataclass
class RawImage:
    """8-bit RGB image stored as an (H, W, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected an (H, W, 3) pixel array, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {px.dtype}")
        self.pixels = np.ascontiguousarray(px)

    @property
    def H(self) -> int:
        return self.pixels.shape[0]

    @property
    def W(self) -> int:
        return self.pixels.shape[1]

    @property
    def dims(self) -> ImageDims:
        return ImageDims(self.H, self.W)

    def __eq__(self, other) -> bool:
        return isinstance(other, RawImage) and np.array_equal(self.pixels, other.pixels)


_WS = b" \t\n\r\x0b\x0c"


def read_ppm(data: bytes) -> RawImage:
    if not data.startswith(b"P6"):
        raise PPMError("not a binary PPM (missing P6 magic)")
    if data[2:3] not in _WS and data[2:3] != b"#":
        raise PPMError("missing whitespace after P6 magic")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise PPMError("truncated PPM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise PPMError("unterminated comment in PPM header")
            pos = end + 1
        elif ch in _WS:
            pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise PPMError(f"unexpected byte {ch!r} in PPM header at offset {pos}")
    if pos >= len(data) or data[pos:pos + 1] not in _WS:
        raise PPMError("maxval must be followed by a single whitespace byte")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PPMError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval}; only 255 is accepted")
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise PPMError(f"truncated payload: expected {need} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
    return RawImage(pixels)


def write_ppm(img: RawImage) -> bytes:
    header = f"P6\n{img.W} {img.H}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def load_ppm(path: Union[str, Path]) -> RawImage:
    try:
        return read_ppm(Path(path).read_bytes())
    except PPMError as exc:
        raise PPMError(f"{path}: {exc}") from exc


def save_ppm(path: Union[str, Path], img: RawImage) -> None:
    Path(path).write_bytes(write_ppm(img))

"""GAIC-ANN v1 text files holding per-image candidate crops and scores.

::

    GAIC-ANN v1
    IMG <path> <H> <W> <num_crops>
    <x1> <y1> <x2> <y2> <mos>
    ...

Prediction files use ``PRED`` records with a predicted score in place of MOS.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

from ..geometry import CropRect, ImageDims

MAGIC = "GAIC-ANN v1"
MOS_RANGE = (1.0, 5.0)


class AnnotationError(ValueError):
    pass


@dataclass
class AnnotatedImage:
    path: str
    dims: ImageDims
    crops: List[CropRect] = field(default_factory=list)
    scores: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.dims = ImageDims(*self.dims)
        self.crops = [CropRect(*c) for c in self.crops]
        self.scores = [float(s) for s in self.scores]
        if len(self.crops) != len(self.scores):
            raise AnnotationError(f"{self.path}: {len(self.crops)} crops but {len(self.scores)} scores")

    def pairs(self) -> List[Tuple[CropRect, float]]:
        return list(zip(self.crops, self.scores))


def format_annotations(items: Sequence[AnnotatedImage], kind: str = "IMG") -> str:
    if kind not in ("IMG", "PRED"):
        raise ValueError(f"record kind must be IMG or PRED, got {kind!r}")
    lines = [MAGIC]
    for item in items:
        if not item.path or any(ch.isspace() for ch in item.path):
            raise AnnotationError(f"image path {item.path!r} must be non-empty without whitespace")
        lines.append(f"{kind} {item.path} {item.dims.H} {item.dims.W} {len(item.crops)}")
        for c, s in zip(item.crops, item.scores):
            lines.append(f"{c.x1} {c.y1} {c.x2} {c.y2} {s:.4f}")
    return "\n".join(lines) + "\n"


def parse_annotations(text: str, kind: str = "IMG", source: str = "<annotations>") -> List[AnnotatedImage]:
    """Parse and validate; errors name the image path and line number."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        first = lines[0].strip() if lines else ""
        raise AnnotationError(f"{source}:1: unknown version line {first!r}, expected {MAGIC!r}")
    items: List[AnnotatedImage] = []
    i = 1
    while i < len(lines):
        lineno = i + 1
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        parts = line.split()
        if parts[0] != kind or len(parts) != 5:
            raise AnnotationError(f"{source}:{lineno}: expected '{kind} <path> <H> <W> <num_crops>', got {line!r}")
        path = parts[1]
        try:
            H, W, count = (int(v) for v in parts[2:])
        except ValueError:
            raise AnnotationError(f"{source}:{lineno}: non-integer field in {line!r}") from None
        if H < 1 or W < 1 or count < 0:
            raise AnnotationError(f"{source}:{lineno}: invalid dims/count in {line!r}")
        dims = ImageDims(H, W)
        crops, scores = [], []
        for _ in range(count):
            if i >= len(lines):
                raise AnnotationError(f"{source}: image {path}: expected {count} crops, file ended after {len(crops)}")
            lineno = i + 1
            fields = lines[i].split()
            i += 1
            if len(fields) != 5:
                raise AnnotationError(f"{source}:{lineno}: image {path}: expected 'x1 y1 x2 y2 score'")
            try:
                rect = CropRect(*(int(v) for v in fields[:4]))
                score = float(fields[4])
            except ValueError:
                raise AnnotationError(f"{source}:{lineno}: image {path}: malformed crop line") from None
            if not rect.is_valid(dims):
                raise AnnotationError(f"{source}:{lineno}: image {path}: crop {tuple(rect)} invalid for {H}x{W}")
            if kind == "IMG" and not (MOS_RANGE[0] <= score <= MOS_RANGE[1]):
                raise AnnotationError(f"{source}:{lineno}: image {path}: MOS {score} outside [1, 5]")
            crops.append(rect)
            scores.append(score)
        items.append(AnnotatedImage(path, dims, crops, scores))
    return items


def write_annotations(path: Union[str, Path], items: Sequence[AnnotatedImage], kind: str = "IMG") -> None:
    Path(path).write_text(format_annotations(items, kind), encoding="utf-8")


def read_annotations(path: Union[str, Path], kind: str = "IMG") -> List[AnnotatedImage]:
    return parse_annotations(Path(path).read_text(encoding="utf-8"), kind, str(path))

"""Grid-anchor candidate crops and rectangle arithmetic.

Coordinates follow the (row, column) convention: ``x`` indexes rows and
``y`` indexes columns.  Bottom/right edges are exclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Sequence, Tuple

# slack for comparing the area constraint in floating point
_AREA_RTOL = 1e-12


class CropRect(NamedTuple):
    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def height(self) -> int:
        return self.x2 - self.x1

    @property
    def width(self) -> int:
        return self.y2 - self.y1

    def is_valid(self, dims: "ImageDims | None" = None) -> bool:
        if not (self.x1 < self.x2 and self.y1 < self.y2 and self.x1 >= 0 and self.y1 >= 0):
            return False
        if dims is not None:
            return self.x2 <= dims.H and self.y2 <= dims.W
        return True

    def validate(self, dims: "ImageDims | None" = None) -> "CropRect":
        if not self.is_valid(dims):
            where = f" for image {dims.H}x{dims.W}" if dims is not None else ""
            raise ValueError(f"invalid crop {tuple(self)}{where}")
        return self


class ImageDims(NamedTuple):
    H: int
    W: int

    @property
    def area(self) -> int:
        return self.H * self.W


@dataclass(frozen=True)
class GridSpec:
    """Parameters of the grid-anchor formulation.

    ``M x N`` bins partition the image; crop corners are restricted to the
    top-left and bottom-right ``m x n`` anchor regions.  ``lam`` is the
    minimum crop-to-image area fraction and ``[alpha1, alpha2]`` the allowed
    width/height range.
    """

    M: int = 12
    N: int = 12
    m: int = 4
    n: int = 4
    lam: float = 0.5
    alpha1: float = 0.5
    alpha2: float = 2.0

    def __post_init__(self) -> None:
        if self.M < 2 or self.N < 2:
            raise ValueError(f"grid must have at least 2x2 bins, got {self.M}x{self.N}")
        if not (1 <= self.m and 2 * self.m <= self.M):
            raise ValueError(f"m={self.m} must satisfy 1 <= m <= M/2 (M={self.M})")
        if not (1 <= self.n and 2 * self.n <= self.N):
            raise ValueError(f"n={self.n} must satisfy 1 <= n <= N/2 (N={self.N})")
        lo = self.min_lambda
        if not (lo - 1e-12 <= self.lam < 1.0):
            raise ValueError(f"lambda={self.lam} outside [{lo:.6f}, 1)")
        if not (0 < self.alpha1 <= self.alpha2):
            raise ValueError(f"aspect bounds must satisfy 0 < alpha1 <= alpha2, got {self.alpha1}, {self.alpha2}")

    @property
    def min_lambda(self) -> float:
        return (self.M - 2 * self.m + 1) * (self.N - 2 * self.n + 1) / (self.M * self.N)


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _check_dims(dims: ImageDims, spec: GridSpec) -> None:
    if dims.H < spec.M or dims.W < spec.N:
        raise ValueError(
            f"image {dims.H}x{dims.W} is smaller than the {spec.M}x{spec.N} grid"
        )


def anchor_centers(dims: ImageDims, spec: GridSpec) -> Tuple[List[float], List[float]]:
    """Bin centers of the ``M x N`` grid, in pixel units."""
    _check_dims(dims, spec)
    rows = [(k + 0.5) * dims.H / spec.M for k in range(spec.M)]
    cols = [(k + 0.5) * dims.W / spec.N for k in range(spec.N)]
    return rows, cols


def satisfies_constraints(crop: CropRect, dims: ImageDims, spec: GridSpec) -> bool:
    """Area and aspect-ratio constraints, evaluated on the integer rectangle."""
    if crop_area(crop) < spec.lam * dims.area * (1.0 - _AREA_RTOL):
        return False
    ratio = aspect_ratio(crop)
    return spec.alpha1 <= ratio <= spec.alpha2


def enumerate_candidates(dims: ImageDims, spec: GridSpec = GridSpec()) -> List[CropRect]:
    """All grid-anchor crops of an image that pass both constraints.

    Order is row-major over the top-left anchor, then row-major over the
    bottom-right anchor.  The result may be empty.
    """
    dims = ImageDims(*dims)
    rows, cols = anchor_centers(dims, spec)
    rows_px = [round_half_up(r) for r in rows]
    cols_px = [round_half_up(c) for c in cols]
    tl_rows = rows_px[: spec.m]
    tl_cols = cols_px[: spec.n]
    br_rows = rows_px[spec.M - spec.m:]
    br_cols = cols_px[spec.N - spec.n:]

    out = []
    for x1 in tl_rows:
        for y1 in tl_cols:
            for x2 in br_rows:
                for y2 in br_cols:
                    crop = CropRect(x1, y1, x2, y2)
                    if satisfies_constraints(crop, dims, spec):
                        out.append(crop)
    return out


def crop_area(c: CropRect) -> int:
    return (c.x2 - c.x1) * (c.y2 - c.y1)


def aspect_ratio(c: CropRect) -> float:
    """Width over height."""
    return (c.y2 - c.y1) / (c.x2 - c.x1)


def intersection(a: CropRect, b: CropRect) -> int:
    h = min(a.x2, b.x2) - max(a.x1, b.x1)
    w = min(a.y2, b.y2) - max(a.y1, b.y1)
    if h <= 0 or w <= 0:
        return 0
    return h * w


def iou(a: CropRect, b: CropRect) -> float:
    inter = intersection(a, b)
    union = crop_area(a) + crop_area(b) - inter
    return inter / union


def bde(a: CropRect, b: CropRect, dims: ImageDims) -> float:
    """Boundary displacement error: mean of the four edge shifts, each
    normalized by the image extent along its axis."""
    H, W = dims
    return 0.25 * (
        abs(a.x1 - b.x1) / H
        + abs(a.x2 - b.x2) / H
        + abs(a.y1 - b.y1) / W
        + abs(a.y2 - b.y2) / W
    )


BASELINE_MODES = ("N", "C", "L")


def baseline_crop(dims: ImageDims, mode: str, spec: GridSpec = GridSpec()) -> CropRect:
    """Training-free reference crops.

    ``N`` returns the whole image, ``C`` the centred crop scaled by 0.9 and
    ``L`` the largest grid-anchor candidate (first in enumeration order on ties).
    """
    dims = ImageDims(*dims)
    H, W = dims
    mode = mode.upper()
    if mode == "N":
        return CropRect(0, 0, H, W)
    if mode == "C":
        top = math.floor(0.05 * H)
        left = math.floor(0.05 * W)
        return CropRect(top, left, top + round_half_up(0.9 * H), left + round_half_up(0.9 * W))
    if mode == "L":
        cands = enumerate_candidates(dims, spec)
        if not cands:
            raise ValueError(f"no eligible candidates for image {H}x{W}; Baseline_L undefined")
        best = cands[0]
        for c in cands[1:]:
            if crop_area(c) > crop_area(best):
                best = c
        return best
    raise ValueError(f"unknown baseline mode {mode!r}; expected one of {BASELINE_MODES}")


def nearest_candidate(rect: CropRect, candidates: Sequence[CropRect]) -> int:
    """Index of the candidate with the highest IoU against ``rect``."""
    if not candidates:
        raise ValueError("empty candidate list")
    best, best_iou = 0, -1.0
    for i, c in enumerate(candidates):
        v = iou(rect, c)
        if v > best_iou:
            best, best_iou = i, v
    return best


def _scale_edges(lo: int, hi: int, factor: float, limit: int) -> Tuple[int, int]:
    a, b = lo * factor, hi * factor
    x1, x2 = round_half_up(a), round_half_up(b)
    if x2 <= x1:
        # collapsed to zero width: keep the single pixel around the exact center
        x1 = min(max(math.floor(0.5 * (a + b)), 0), limit - 1)
        x2 = x1 + 1
    return max(x1, 0), min(x2, limit)


def scale_crop(c: CropRect, src: ImageDims, dst: ImageDims) -> CropRect:
    """Map a crop between two resolutions of the same image; each edge moves by at most one pixel."""
    x1, x2 = _scale_edges(c.x1, c.x2, dst.H / src.H, dst.H)
    y1, y2 = _scale_edges(c.y1, c.y2, dst.W / src.W, dst.W)
    return CropRect(x1, y1, x2, y2)


def format_crops(crops: Iterable[CropRect]) -> str:
    return "".join(f"{c.x1} {c.y1} {c.x2} {c.y2}\n" for c in crops)


def parse_crops(text: str) -> List[CropRect]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 'x1 y1 x2 y2', got {line!r}")
        out.append(CropRect(*(int(p) for p in parts)).validate())
    return out

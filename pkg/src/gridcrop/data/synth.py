"""Seeded synthetic scenes with an analytic composition score for every candidate.

A scene is a textured background, one salient subject rectangle and a few
distractor discs hugging the border.  The oracle MOS of a crop rewards
keeping the subject, placing its center near a rule-of-thirds intersection
and cutting the distractors away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from ..geometry import CropRect, GridSpec, ImageDims, enumerate_candidates, intersection
from .annotations import AnnotatedImage
from .ppm import RawImage

W_SUBJECT = 0.5
W_THIRDS = 0.3
W_DISTRACTOR = 0.2
# distance from a thirds intersection at which the alignment term reaches zero
THIRDS_RADIUS = 1.0 / 3.0
_THIRDS = (1.0 / 3.0, 2.0 / 3.0)


@dataclass(frozen=True)
class Distractor:
    cy: int
    cx: int
    radius: int
    color: Tuple[int, int, int]


@dataclass(frozen=True)
class SynthSceneSpec:
    seed: int
    dims: ImageDims
    subject: CropRect
    subject_color: Tuple[int, int, int]
    distractors: Tuple[Distractor, ...] = ()
    base_color: Tuple[float, float, float] = (110.0, 120.0, 115.0)
    gradient: Tuple[float, float] = (20.0, -15.0)
    # (amplitude, row frequency, column frequency, phase) per texture wave
    waves: Tuple[Tuple[float, float, float, float], ...] = field(default_factory=tuple)
    noise: float = 6.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", ImageDims(*self.dims))
        object.__setattr__(self, "subject", CropRect(*self.subject))
        self.subject.validate(self.dims)


def random_scene_spec(seed: int, short_side: int = 256, long_range: Tuple[int, int] = (256, 384)) -> SynthSceneSpec:
    """Draw a scene layout from ``seed`` alone."""
    rng = np.random.default_rng(seed)
    long_side = int(rng.integers(long_range[0] // 16, long_range[1] // 16 + 1)) * 16
    H, W = (short_side, long_side) if rng.random() < 0.7 else (long_side, short_side)

    sh = int(H * rng.uniform(0.18, 0.38))
    sw = int(W * rng.uniform(0.18, 0.38))
    cy = int(rng.integers(sh // 2 + 1, H - sh // 2 - 1))
    cx = int(rng.integers(sw // 2 + 1, W - sw // 2 - 1))
    subject = CropRect(cy - sh // 2, cx - sw // 2, cy - sh // 2 + sh, cx - sw // 2 + sw)
    hue = rng.integers(0, 3)
    subject_color = tuple(int(v) for v in np.roll([235, 60, 40], hue))

    distractors = []
    for _ in range(int(rng.integers(1, 4))):
        r = int(rng.integers(int(0.04 * min(H, W)), int(0.08 * min(H, W)) + 1))
        side = int(rng.integers(0, 4))
        band_h, band_w = max(r, int(0.12 * H)), max(r, int(0.12 * W))
        along_r = int(rng.integers(r, H - r))
        along_c = int(rng.integers(r, W - r))
        if side == 0:
            dcy, dcx = int(rng.integers(0, band_h)), along_c
        elif side == 1:
            dcy, dcx = H - 1 - int(rng.integers(0, band_h)), along_c
        elif side == 2:
            dcy, dcx = along_r, int(rng.integers(0, band_w))
        else:
            dcy, dcx = along_r, W - 1 - int(rng.integers(0, band_w))
        color = tuple(int(v) for v in rng.integers(10, 70, size=3))
        distractors.append(Distractor(dcy, dcx, r, color))

    waves = tuple(
        (float(rng.uniform(4, 12)), float(rng.uniform(0.01, 0.06)), float(rng.uniform(0.01, 0.06)), float(rng.uniform(0, 2 * math.pi)))
        for _ in range(3)
    )
    base = tuple(float(v) for v in rng.uniform(80, 150, size=3))
    grad = (float(rng.uniform(-25, 25)), float(rng.uniform(-25, 25)))
    return SynthSceneSpec(seed, ImageDims(H, W), subject, subject_color, tuple(distractors), base, grad, waves)


def flip_scene(spec: SynthSceneSpec) -> SynthSceneSpec:
    """Mirror the scene layout left-right."""
    W = spec.dims.W
    s = spec.subject
    return replace(
        spec,
        subject=CropRect(s.x1, W - s.y2, s.x2, W - s.y1),
        distractors=tuple(replace(d, cx=W - 1 - d.cx) for d in spec.distractors),
    )


def distractor_mask(spec: SynthSceneSpec) -> np.ndarray:
    H, W = spec.dims
    rr = np.arange(H)[:, None]
    cc = np.arange(W)[None, :]
    mask = np.zeros((H, W), dtype=bool)
    for d in spec.distractors:
        mask |= (rr - d.cy) ** 2 + (cc - d.cx) ** 2 <= d.radius ** 2
    return mask


def render(spec: SynthSceneSpec) -> RawImage:
    H, W = spec.dims
    rng = np.random.default_rng([spec.seed, 1])
    rr = np.arange(H, dtype=np.float64)[:, None]
    cc = np.arange(W, dtype=np.float64)[None, :]
    tex = spec.gradient[0] * (rr / H - 0.5) + spec.gradient[1] * (cc / W - 0.5)
    for amp, fr, fc, ph in spec.waves:
        tex = tex + amp * np.sin(fr * rr + fc * cc + ph)
    img = np.asarray(spec.base_color)[None, None, :] + tex[..., None]
    img = img + rng.normal(0.0, spec.noise, size=(H, W, 3))

    s = spec.subject
    body = np.asarray(spec.subject_color, dtype=np.float64)
    img[s.x1:s.x2, s.y1:s.y2] = body
    # inner stripes make the subject textured rather than flat
    stripe = ((np.arange(s.x1, s.x2)[:, None] // 6) % 2 == 0) & np.ones((1, s.y2 - s.y1), dtype=bool)
    img[s.x1:s.x2, s.y1:s.y2][stripe] = 0.75 * body + 60.0

    for d in spec.distractors:
        disc = (rr - d.cy) ** 2 + (cc - d.cx) ** 2 <= d.radius ** 2
        img[disc] = np.asarray(d.color, dtype=np.float64)
    return RawImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def thirds_alignment(spec: SynthSceneSpec, crop: CropRect) -> float:
    s = spec.subject
    cy = 0.5 * (s.x1 + s.x2)
    cx = 0.5 * (s.y1 + s.y2)
    if not (crop.x1 <= cy <= crop.x2 and crop.y1 <= cx <= crop.y2):
        return 0.0
    u = (cy - crop.x1) / crop.height
    v = (cx - crop.y1) / crop.width
    d = min(math.hypot(u - a, v - b) for a in _THIRDS for b in _THIRDS)
    return max(0.0, 1.0 - d / THIRDS_RADIUS)


def oracle_mos(spec: SynthSceneSpec, crop: CropRect, dmask: Optional[np.ndarray] = None) -> float:
    """Composition score in [1, 5] (unrounded)."""
    s = spec.subject
    coverage = intersection(crop, s) / ((s.x2 - s.x1) * (s.y2 - s.y1))
    if dmask is None:
        dmask = distractor_mask(spec)
    total = dmask.sum()
    dcov = float(dmask[crop.x1:crop.x2, crop.y1:crop.y2].sum() / total) if total else 0.0
    raw = W_SUBJECT * coverage + W_THIRDS * thirds_alignment(spec, crop) - W_DISTRACTOR * dcov
    # raw lies in [-W_DISTRACTOR, W_SUBJECT + W_THIRDS]
    lo, hi = -W_DISTRACTOR, W_SUBJECT + W_THIRDS
    return 1.0 + 4.0 * (raw - lo) / (hi - lo)


def synth_generate(spec: SynthSceneSpec, grid: GridSpec = GridSpec(), path: Optional[str] = None) -> Tuple[RawImage, AnnotatedImage]:
    """Render a scene and score every grid-anchor candidate; MOS rounded to 4 decimals."""
    image = render(spec)
    crops = enumerate_candidates(spec.dims, grid)
    dmask = distractor_mask(spec)
    scores = [round(oracle_mos(spec, c, dmask), 4) for c in crops]
    name = path if path is not None else f"synth_{spec.seed:06d}.ppm"
    return image, AnnotatedImage(name, spec.dims, crops, scores)


def generate_dataset(count: int, seed: int, grid: GridSpec = GridSpec()) -> List[Tuple[RawImage, AnnotatedImage]]:
    """``count`` scenes whose seeds derive from ``seed``; scenes with a flat MOS table are redrawn."""
    out = []
    ss = np.random.SeedSequence(seed)
    scene_seeds = ss.generate_state(count * 4, dtype=np.uint32)
    k = 0
    while len(out) < count:
        if k >= len(scene_seeds):
            raise RuntimeError("could not draw enough non-degenerate scenes")
        spec = random_scene_spec(int(scene_seeds[k]))
        k += 1
        image, ann = synth_generate(spec, grid, path=f"img_{len(out):05d}.ppm")
        if len(ann.scores) < 2 or max(ann.scores) - min(ann.scores) < 0.05:
            continue
        out.append((image, ann))
    return out

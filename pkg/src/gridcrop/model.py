"""Crop-scoring network: multi-scale backbone, RoI + RoD alignment, large-kernel head."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .data.ppm import RawImage
from .data.transforms import IMAGENET_MEAN, IMAGENET_STD, preprocess
from .geometry import CropRect, GridSpec, ImageDims, aspect_ratio, enumerate_candidates, scale_crop

CKPT_MAGIC = "GAIC-CKPT v1"
ASPECT_TOLERANCE = 0.05


@dataclass(frozen=True)
class ModelConfig:
    backbone_channels: Tuple[int, ...] = (16, 32, 64, 96, 128)
    reduced_channels: int = 8
    align_size: int = 9
    head_width: int = 768
    tap_strides: Tuple[int, int, int] = (8, 16, 32)
    stage_depth: int = 1
    # input preprocessing travels with the weights it was trained for
    short_side: int = 256
    input_mean: Tuple[float, float, float] = IMAGENET_MEAN
    input_std: Tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self) -> None:
        object.__setattr__(self, "backbone_channels", tuple(int(c) for c in self.backbone_channels))
        object.__setattr__(self, "tap_strides", tuple(int(s) for s in self.tap_strides))
        object.__setattr__(self, "input_mean", tuple(float(v) for v in self.input_mean))
        object.__setattr__(self, "input_std", tuple(float(v) for v in self.input_std))
        if len(self.input_mean) != 3 or len(self.input_std) != 3 or min(self.input_std) <= 0:
            raise ValueError("input_mean/input_std need three values, std positive")
        if self.reduced_channels < 1 or self.align_size < 1 or self.head_width < 1:
            raise ValueError("reduced_channels, align_size and head_width must be positive")
        if len(self.tap_strides) != 3:
            raise ValueError(f"exactly three taps are fused, got {self.tap_strides}")
        if self.tap_strides[1] != 16:
            raise ValueError("the middle tap (fusion resolution) must be at stride 16")
        stage_strides = [2 ** (i + 1) for i in range(len(self.backbone_channels))]
        missing = [s for s in self.tap_strides if s not in stage_strides]
        if missing:
            raise ValueError(f"tap strides {missing} not produced by {len(self.backbone_channels)} stride-2 stages")
        if self.stage_depth < 1:
            raise ValueError("stage_depth must be >= 1")
        if self.short_side < self.max_stride:
            raise ValueError(f"short_side {self.short_side} is below the backbone stride {self.max_stride}")

    @property
    def tap_stages(self) -> List[int]:
        return [int(math.log2(s)) - 1 for s in self.tap_strides]

    @property
    def max_stride(self) -> int:
        return 2 ** len(self.backbone_channels)

    @property
    def head_inputs(self) -> int:
        return 2 * self.reduced_channels * self.align_size ** 2


class ScoredCrop(NamedTuple):
    crop: CropRect
    score: float
    rank: int


class CropScorer:
    """Parameters plus the MOS normalization used to de-normalize predictions."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = int(seed)
        self.mos_mean = 0.0
        self.mos_std = 1.0
        self.params: Dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed), dtype)

    def _add(self, name: str, arr: np.ndarray, dtype) -> None:
        self.params[name] = Tensor(np.ascontiguousarray(arr, dtype=dtype), requires_grad=True, name=name)

    def _init_params(self, rng: np.random.Generator, dtype) -> None:
        cfg = self.config
        c_in = 3
        for i, c_out in enumerate(cfg.backbone_channels):
            for d in range(cfg.stage_depth):
                src = c_in if d == 0 else c_out
                std = math.sqrt(2.0 / (src * 9))
                self._add(f"stage{i}.{d}.weight", rng.normal(0.0, std, (c_out, src, 3, 3)), dtype)
                self._add(f"stage{i}.{d}.gamma", np.ones(c_out), dtype)
                self._add(f"stage{i}.{d}.beta", np.zeros(c_out), dtype)
            c_in = c_out
        fused = sum(cfg.backbone_channels[s] for s in cfg.tap_stages)
        self._add("reduce.weight", rng.normal(0.0, math.sqrt(1.0 / fused), (cfg.reduced_channels, fused, 1, 1)), dtype)
        self._add("reduce.bias", np.zeros(cfg.reduced_channels), dtype)
        # Glorot-uniform head
        lim1 = math.sqrt(6.0 / (cfg.head_inputs + cfg.head_width))
        self._add("head.fc1.weight", rng.uniform(-lim1, lim1, (cfg.head_inputs, cfg.head_width)), dtype)
        self._add("head.fc1.bias", np.zeros(cfg.head_width), dtype)
        lim2 = math.sqrt(6.0 / (cfg.head_width + 1))
        self._add("head.fc2.weight", rng.uniform(-lim2, lim2, (cfg.head_width, 1)), dtype)
        self._add("head.fc2.bias", np.zeros(1), dtype)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def astype(self, dtype) -> "CropScorer":
        for t in self.params.values():
            t.data = t.data.astype(dtype)
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            extra = sorted(set(state) ^ set(self.params))
            raise ValueError(f"parameter names do not match the model config: {extra[:5]}")
        for k, t in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} vs expected {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def normalize_mos(self, mos) -> np.ndarray:
        return (np.asarray(mos, dtype=np.float64) - self.mos_mean) / self.mos_std

    def denormalize(self, scores) -> np.ndarray:
        return np.asarray(scores, dtype=np.float64) * self.mos_std + self.mos_mean


def _block(model: CropScorer, x: Tensor, prefix: str, stride: int) -> Tensor:
    p = model.params
    x = ad.conv2d(x, p[prefix + ".weight"], stride=stride, padding=1)
    if x.shape[2] * x.shape[3] > 1:
        # a 1x1 map has no spatial statistics to normalize with
        x = ad.channel_norm(x, p[prefix + ".gamma"], p[prefix + ".beta"])
    return ad.relu(x)


def extract_features(model: CropScorer, image: Tensor) -> Tensor:
    """Fused stride-16 feature map with ``reduced_channels`` channels."""
    cfg = model.config
    if image.data.ndim != 4 or image.shape[:2] != (1, 3):
        raise ValueError(f"expected a (1, 3, H, W) image tensor, got {image.shape}")
    H, W = image.shape[2:]
    if H < cfg.max_stride or W < cfg.max_stride:
        raise ValueError(f"image {H}x{W} is smaller than the backbone stride {cfg.max_stride}")
    x = image
    taps = []
    last = max(cfg.tap_stages)
    for i in range(last + 1):
        for d in range(cfg.stage_depth):
            x = _block(model, x, f"stage{i}.{d}", 2 if d == 0 else 1)
        if i in cfg.tap_stages:
            taps.append(x)
    mid = taps[1]
    th, tw = mid.shape[2], mid.shape[3]
    fused = ad.channel_concat(*(ad.bilinear_resize(t, th, tw) for t in taps))
    return ad.conv2d(fused, model.params["reduce.weight"], model.params["reduce.bias"])


def crop_scores(model: CropScorer, F: Tensor, crops: Sequence[CropRect], image_dims: ImageDims) -> Tensor:
    """Differentiable per-crop scores, shape (K,)."""
    s = model.config.align_size
    p = model.params
    roi = ad.roi_align(F, list(crops), image_dims, s)
    rod = ad.rod_align(F, list(crops), image_dims, s)
    h = ad.flatten(ad.channel_concat(roi, rod))
    h = ad.relu(ad.fully_connected(h, p["head.fc1.weight"], p["head.fc1.bias"]))
    out = ad.fully_connected(h, p["head.fc2.weight"], p["head.fc2.bias"])
    return ad.reshape(out, (len(crops),))


def score_crops(model: CropScorer, F: Tensor, crops: Sequence[CropRect], image_dims: ImageDims) -> List[float]:
    """Normalized scores for ``crops`` given features ``F`` from :func:`extract_features`."""
    if len(crops) == 0:
        return []
    return [float(v) for v in crop_scores(model, F, crops, ImageDims(*image_dims)).data]


@dataclass
class TrainBatch:
    image: Tensor
    crops: List[CropRect]
    targets: np.ndarray
    image_dims: Optional[ImageDims] = None

    def __post_init__(self) -> None:
        if self.image_dims is None:
            self.image_dims = ImageDims(self.image.shape[2], self.image.shape[3])
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if len(self.crops) != len(self.targets):
            raise ValueError(f"{len(self.crops)} crops but {len(self.targets)} targets")
        if not np.all(np.isfinite(self.targets)):
            raise ValueError("training targets must be finite")
        for c in self.crops:
            CropRect(*c).validate(self.image_dims)


def batch_loss(model: CropScorer, batch: TrainBatch, delta: float = 1.0) -> Tensor:
    F = extract_features(model, batch.image)
    pred = crop_scores(model, F, batch.crops, batch.image_dims)
    return ad.huber_loss(pred, batch.targets.astype(pred.dtype), delta)


def train_step(model: CropScorer, batch: TrainBatch, opt: AdamState, delta: float = 1.0) -> float:
    """One forward/backward pass and ADAM update; returns the mean Huber loss.

    A non-finite loss raises ``FloatingPointError`` before any state changes.
    """
    loss = batch_loss(model, batch, delta)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite training loss {value}")
    params = model.parameters()
    for t in params:
        t.grad = None
    loss.backward()
    for t in params:
        if t.grad is None:
            # parameters outside the graph (e.g. norm of a 1x1 stage) get no update
            t.grad = np.zeros_like(t.data)
    ad.adam_step(params, opt)
    return value


def filter_aspect(crops: Sequence[CropRect], aspect: Optional[float], tol: float = ASPECT_TOLERANCE) -> List[CropRect]:
    if aspect is None:
        return list(crops)
    if aspect <= 0:
        raise ValueError(f"aspect ratio must be positive, got {aspect}")
    return [c for c in crops if abs(aspect_ratio(c) - aspect) / aspect <= tol]


def prepare_input(model: CropScorer, image: RawImage) -> Tensor:
    cfg = model.config
    return preprocess(image, cfg.short_side, cfg.input_mean, cfg.input_std, dtype=model.dtype)


def score_image(model: CropScorer, image: RawImage, crops: Sequence[CropRect]) -> np.ndarray:
    """Normalized scores of ``crops`` (original-pixel coordinates) on ``image``."""
    if len(crops) == 0:
        return np.zeros(0)
    x = prepare_input(model, image)
    dims = ImageDims(x.shape[2], x.shape[3])
    mapped = [scale_crop(CropRect(*c), image.dims, dims) for c in crops]
    F = extract_features(model, x)
    return np.asarray(score_crops(model, F, mapped, dims))


def predict_image(model: CropScorer, image: RawImage, spec: GridSpec = GridSpec(), return_k: int = 1,
                  aspect: Optional[float] = None) -> List[ScoredCrop]:
    """Best ``return_k`` grid-anchor crops, scores de-normalized to the MOS scale."""
    if return_k < 1:
        raise ValueError(f"return_k must be >= 1, got {return_k}")
    cands = filter_aspect(enumerate_candidates(image.dims, spec), aspect)
    if not cands:
        target = "" if aspect is None else f" with aspect {aspect}"
        raise ValueError(f"no candidate crops{target} for image {image.H}x{image.W}")
    scores = score_image(model, image, cands)
    order = np.argsort(-scores, kind="stable")[:return_k]
    mos = model.denormalize(scores)
    return [ScoredCrop(cands[i], float(mos[i]), r + 1) for r, i in enumerate(order)]


# ---------------------------------------------------------------------------
# checkpoints


def _fmt_tuple(t) -> str:
    return ",".join(str(v) for v in t)


def dump_checkpoint(model: CropScorer) -> bytes:
    cfg = model.config
    lines = [
        CKPT_MAGIC,
        f"backbone_channels {_fmt_tuple(cfg.backbone_channels)}",
        f"reduced_channels {cfg.reduced_channels}",
        f"align_size {cfg.align_size}",
        f"head_width {cfg.head_width}",
        f"tap_strides {_fmt_tuple(cfg.tap_strides)}",
        f"stage_depth {cfg.stage_depth}",
        f"short_side {cfg.short_side}",
        f"input_mean {','.join(repr(v) for v in cfg.input_mean)}",
        f"input_std {','.join(repr(v) for v in cfg.input_std)}",
        f"mos_mean {float(model.mos_mean)!r}",
        f"mos_std {float(model.mos_std)!r}",
        f"seed {model.seed}",
    ]
    return ("\n".join(lines) + "\n").encode("ascii") + ad.dump_params(model.state_dict())


def load_checkpoint(blob: bytes) -> CropScorer:
    header_end = blob.find(b"TENSORS ")
    if not blob.startswith((CKPT_MAGIC + "\n").encode()) or header_end < 0:
        raise ValueError(f"not a checkpoint (expected leading line {CKPT_MAGIC!r})")
    fields = {}
    for line in blob[:header_end].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        cfg = ModelConfig(
            backbone_channels=tuple(int(v) for v in fields["backbone_channels"].split(",")),
            reduced_channels=int(fields["reduced_channels"]),
            align_size=int(fields["align_size"]),
            head_width=int(fields["head_width"]),
            tap_strides=tuple(int(v) for v in fields["tap_strides"].split(",")),
            stage_depth=int(fields["stage_depth"]),
            short_side=int(fields["short_side"]),
            input_mean=tuple(float(v) for v in fields["input_mean"].split(",")),
            input_std=tuple(float(v) for v in fields["input_std"].split(",")),
        )
        mos_mean, mos_std, seed = float(fields["mos_mean"]), float(fields["mos_std"]), int(fields["seed"])
    except KeyError as exc:
        raise ValueError(f"checkpoint header is missing field {exc}") from None
    state, used = ad.load_params(blob[header_end:])
    if header_end + used != len(blob):
        raise ValueError("trailing bytes after checkpoint data")
    model = CropScorer(cfg, seed=seed)
    model.load_state_dict(state)
    model.mos_mean, model.mos_std = mos_mean, mos_std
    return model

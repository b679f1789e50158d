"""Training loop, dataset loading and model/baseline evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import AdamState
from .data.annotations import AnnotatedImage, read_annotations
from .data.ppm import RawImage, load_ppm
from .data.transforms import AugmentConfig, augment
from .geometry import CropRect, GridSpec, ImageDims, baseline_crop, crop_area, nearest_candidate, scale_crop
from .metrics import MetricReport, report, single_return_report, srcc
from .model import CropScorer, ModelConfig, TrainBatch, prepare_input, score_image, train_step

log = logging.getLogger(__name__)

Sample = Tuple[RawImage, AnnotatedImage]


@dataclass
class TrainConfig:
    epochs: int = 80
    lr: float = 1e-4
    crops_per_batch: int = 64
    seed: int = 0
    val_fraction: float = 0.1
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_srcc: Optional[float]


def load_dataset(ann_path: Union[str, Path]) -> List[Sample]:
    """Annotations plus their decoded images; image paths resolve relative to the file."""
    ann_path = Path(ann_path)
    items = read_annotations(ann_path)
    out = []
    for item in items:
        img_path = Path(item.path)
        if not img_path.is_absolute():
            img_path = ann_path.parent / img_path
        image = load_ppm(img_path)
        if image.dims != item.dims:
            raise ValueError(f"{img_path}: image is {image.H}x{image.W} but annotation says {item.dims.H}x{item.dims.W}")
        out.append((image, item))
    return out


def split_indices(n: int, val_fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """Seeded by-image split; at least one training image is always kept."""
    order = np.random.default_rng([seed, 7]).permutation(n)
    n_val = int(round(n * val_fraction))
    n_val = min(n_val, max(n - 1, 0))
    return sorted(int(i) for i in order[n_val:]), sorted(int(i) for i in order[:n_val])


def mos_statistics(items: Sequence[AnnotatedImage]) -> Tuple[float, float]:
    allmos = np.concatenate([np.asarray(it.scores, dtype=np.float64) for it in items if it.scores])
    std = float(allmos.std())
    return float(allmos.mean()), std if std > 0 else 1.0


def sample_crops(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    if n >= k:
        return rng.choice(n, size=k, replace=False)
    return rng.choice(n, size=k, replace=True)


def make_batch(image: RawImage, pairs: Sequence[Tuple[CropRect, float]], model: CropScorer,
               idx: Sequence[int]) -> TrainBatch:
    x = prepare_input(model, image)
    dims = ImageDims(x.shape[2], x.shape[3])
    crops = [scale_crop(pairs[i][0], image.dims, dims) for i in idx]
    targets = model.normalize_mos([pairs[i][1] for i in idx])
    return TrainBatch(x, crops, targets, dims)


def predict_scores(model: CropScorer, samples: Sequence[Sample]) -> List[np.ndarray]:
    """Normalized model scores for every annotated crop of every sample."""
    return [score_image(model, image, item.crops) for image, item in samples]


def mean_srcc(model: CropScorer, samples: Sequence[Sample]) -> float:
    preds = predict_scores(model, samples)
    return float(np.mean([srcc(item.scores, p) for p, (_, item) in zip(preds, samples)]))


def fit(train: Sequence[Sample], val: Sequence[Sample], config: TrainConfig,
        model_config: ModelConfig = ModelConfig(),
        on_epoch: Optional[Callable[[EpochLog], None]] = None) -> Tuple[CropScorer, List[EpochLog]]:
    """Train a scorer; returns the best-validation model (last one without validation)."""
    if not train:
        raise ValueError("empty training set")
    model = CropScorer(model_config, seed=config.seed)
    model.mos_mean, model.mos_std = mos_statistics([item for _, item in train])
    opt = AdamState(lr=config.lr)
    rng = np.random.default_rng([config.seed, 11])
    history: List[EpochLog] = []
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    best_val = -math.inf

    for epoch in range(1, config.epochs + 1):
        losses = []
        for idx in rng.permutation(len(train)):
            image, item = train[idx]
            if not item.crops:
                continue
            aug_img, pairs = augment(image, item.pairs(), rng, config.augment)
            pick = sample_crops(len(pairs), config.crops_per_batch, rng)
            batch = make_batch(aug_img, pairs, model, pick)
            try:
                losses.append(train_step(model, batch, opt))
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch}, image {item.path}: {exc}") from exc
        val_srcc = mean_srcc(model, val) if val else None
        entry = EpochLog(epoch, float(np.mean(losses)) if losses else float("nan"), val_srcc)
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.info("epoch %d loss %.5f val_srcc %s", epoch, entry.train_loss,
                 "--" if val_srcc is None else f"{val_srcc:.4f}")
        score = val_srcc if val_srcc is not None else epoch
        if score > best_val:
            best_val = score
            best_state = {k: v.copy() for k, v in model.state_dict().items()}

    model.load_state_dict(best_state)
    return model, history


def evaluate_model(model: CropScorer, samples: Sequence[Sample]) -> MetricReport:
    preds = predict_scores(model, samples)
    return report(preds, [item.scores for _, item in samples], names=[item.path for _, item in samples])


def baseline_returns(items: Sequence[AnnotatedImage], mode: str, spec: GridSpec = GridSpec()) -> List[int]:
    """Index of the annotated candidate each baseline returns.

    ``L`` picks the largest annotated candidate; ``N`` and ``C`` snap their
    rectangle to the annotated candidate with the highest IoU.
    """
    out = []
    for item in items:
        if not item.crops:
            raise ValueError(f"{item.path}: no annotated candidates")
        if mode == "L":
            areas = [crop_area(c) for c in item.crops]
            out.append(int(np.argmax(areas)))
        else:
            out.append(nearest_candidate(baseline_crop(item.dims, mode, spec), item.crops))
    return out


def baseline_reports(items: Sequence[AnnotatedImage], spec: GridSpec = GridSpec()) -> List[Tuple[str, MetricReport]]:
    gts = [it.scores for it in items]
    return [(f"Baseline_{mode}", single_return_report(baseline_returns(items, mode, spec), gts))
            for mode in ("L", "N", "C")]

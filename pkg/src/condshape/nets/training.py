# Copyright 2024-present The condshape Authors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Patch-wise UNet training.

Edge detector: MSE against ground-truth edge maps regenerated every epoch with
the cosine-annealed lambda; the last epoch is kept.
Baseline: Jaccard loss on rigidly augmented patches; the epoch with the best
validation Dice is kept.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from condshape.augment import AugmentConfig, apply_geo_to_volume, draw_geo
from condshape.edges import EdgeParams, LambdaSchedule, edge_map_union, lambda_at
from condshape.errors import ConfigError
from condshape.metrics import dice
from condshape.nets.unet import UNet, UNetConfig, build_unet, predict_volume, snapshot, to_input, unet_forward
from condshape.phantoms.models import PhantomCase
from condshape.tensorgrad import Adam, jaccard_loss, mse_loss, no_grad
from condshape.tools import stats
from condshape.tools.seeds import derive_seed, rng_for
from condshape.tools.workers import parallel_map
from condshape.volume import Volume3, VolumeKind, extract_patch


class TrainConfig(BaseModel):
    epochs: int = Field(default=10, ge=1)
    lr: float = Field(default=0.001, gt=0.0)
    batch_size: int = Field(default=2, ge=1)
    patches_per_case: int = Field(default=1, ge=1)
    # share of patches forced to intersect the structure's bounding box
    foreground_fraction: float = Field(default=0.5, ge=0.0, le=1.0)


class EdgeTrainConfig(TrainConfig):
    unet: UNetConfig = Field(default_factory=UNetConfig.edge_detector)
    lambda_start: float = Field(default=0.001, gt=0.0)
    lambda_end: float = Field(default=2.0, gt=0.0)
    # off by default: the edge detector trains on unaugmented data
    augment: bool = False
    augment_policy: AugmentConfig = Field(default_factory=lambda: AugmentConfig.rigid(15.0, 3.0))


class BaselineTrainConfig(TrainConfig):
    unet: UNetConfig = Field(default_factory=UNetConfig.baseline)
    augment: bool = True
    augment_policy: AugmentConfig = Field(default_factory=lambda: AugmentConfig.rigid(15.0, 3.0))


@dataclass
class TrainResult:
    """
    Attributes:
        model: Trained network (already holding the chosen epoch's state)
        log: One record per epoch {epoch, train_loss, valid_metric, lambda}
        chosen_epoch: 1-based epoch whose parameters the model holds
        lambdas: Lambda used per epoch (edge detector only)
    """
    model: UNet
    log: List[Dict[str, Any]] = field(default_factory=list)
    chosen_epoch: int = 0
    lambdas: List[float] = field(default_factory=list)


def bounding_box(mask: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    idx = np.argwhere(mask > 0)
    if idx.size == 0:
        return None
    return idx.min(axis=0), idx.max(axis=0)


def patch_corner(
    dims: Sequence[int],
    size: int,
    rng: np.random.Generator,
    bbox: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    force_foreground: bool = False,
) -> Tuple[int, int, int]:
    """
    Uniform random patch corner; with force_foreground and a bounding box, the
    patch is drawn among corners whose cube intersects the box.
    """
    corner = []
    for a, n in enumerate(dims):
        hi = n - size
        lo = 0
        if force_foreground and bbox is not None:
            lo = max(0, int(bbox[0][a]) - size + 1)
            hi = min(hi, int(bbox[1][a]))
        corner.append(int(rng.integers(lo, hi + 1)))
    return tuple(corner)


def _sample_patches(
    pairs: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    size: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """pairs: (input, target, structure mask) arrays already padded to >= size"""
    out = []
    for image, target, structure in pairs:
        bbox = bounding_box(structure)
        for _ in range(cfg.patches_per_case):
            force = rng.random() < cfg.foreground_fraction
            corner = patch_corner(image.shape, size, rng, bbox, force)
            out.append((extract_patch(image, corner, size), extract_patch(target, corner, size)))
    return out


def _padded(arr: np.ndarray, size: int) -> np.ndarray:
    # only grow axes smaller than the patch; random corners cover the rest
    pads = [(0, max(0, size - n)) for n in arr.shape]
    return np.pad(arr, pads, mode="edge")


def _run_epoch(
    model: UNet,
    optimizer: Adam,
    patches: List[Tuple[np.ndarray, np.ndarray]],
    batch_size: int,
    loss_fn,
    rng: np.random.Generator,
) -> float:
    model.train()
    order = rng.permutation(len(patches))
    losses = []
    for start in range(0, len(order), batch_size):
        batch = [patches[i] for i in order[start:start + batch_size]]
        x = to_input([b[0] for b in batch])
        y = np.stack([b[1][None] for b in batch]).astype(x.dtype)
        optimizer.zero_grad()
        loss = loss_fn(unet_forward(model, x), y)
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else float("nan")


def _augment_pair(image: Volume3, masks: List[Volume3], policy: AugmentConfig, seed: int) -> Tuple[Volume3, List[Volume3]]:
    g = draw_geo(seed, policy)
    return apply_geo_to_volume(image, g), [apply_geo_to_volume(m, g) for m in masks]


def _emit(record: Dict[str, Any], log_path: Optional[Path]) -> None:
    line = json.dumps(record, sort_keys=True)
    logger.info(line)
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "a", encoding="utf-8") as f:
            f.write(line + "\n")


def epoch_lambda(cfg: EdgeTrainConfig, epoch: int) -> float:
    """
    Lambda of a 0-based epoch: cosine annealed over T = epochs - 1 so the last
    epoch lands on lambda_end. A single-epoch run is its own last epoch and
    trains at lambda_end.
    """
    if cfg.epochs == 1:
        return cfg.lambda_end
    return lambda_at(LambdaSchedule(cfg.lambda_start, cfg.lambda_end, cfg.epochs - 1), epoch)


def train_edge_detector(
    train_cases: Sequence[PhantomCase],
    valid_cases: Sequence[PhantomCase],
    cfg: EdgeTrainConfig,
    seed: int,
    log_path: Optional[Path] = None,
) -> TrainResult:
    """
    Train the edge detector and return the last epoch.

    Epoch e (0-based) trains at epoch_lambda(cfg, e): lambda_start first and
    lambda_end last. Targets are the union edge maps of all structures,
    regenerated every epoch.

    Raises:
        ConfigError: Empty training set
    """
    if not train_cases:
        raise ConfigError("train_edge_detector needs at least one training case")
    model = build_unet(cfg.unet, derive_seed(seed, "init", "edge"))
    optimizer = Adam(model, lr=cfg.lr)
    size = cfg.unet.patch_size
    result = TrainResult(model=model)

    for e in range(cfg.epochs):
        lam = epoch_lambda(cfg, e)
        params = EdgeParams(lam)

        def targets(item):
            i, case = item
            image, masks = case.intensity, case.structure_masks()
            if cfg.augment:
                image, masks = _augment_pair(image, masks, cfg.augment_policy, derive_seed(seed, "aug", e, i))
            edge = edge_map_union(masks, params)
            union = np.max(np.stack([m.data for m in masks]), axis=0)
            return _padded(image.data, size), _padded(edge.data, size), _padded(union, size)

        pairs = parallel_map(targets, list(enumerate(train_cases)))
        rng = rng_for(seed, "edge", "epoch", e)
        patches = _sample_patches(pairs, size, cfg, rng)
        train_loss = _run_epoch(model, optimizer, patches, cfg.batch_size, mse_loss, rng)

        valid_metric = None
        if valid_cases:
            errs = []
            for case in valid_cases:
                pred = predict_volume(model, case.intensity, VolumeKind.EDGE_MAP)
                gt = edge_map_union(case.structure_masks(), params)
                errs.append(float(np.mean((pred.data - gt.data) ** 2)))
            valid_metric = float(np.mean(errs))

        result.lambdas.append(lam)
        result.log.append({"epoch": e + 1, "train_loss": train_loss, "valid_metric": valid_metric, "lambda": lam})
        _emit(result.log[-1], log_path)

    result.chosen_epoch = cfg.epochs
    stats.record_epochs("edge_detector", cfg.epochs)
    logger.info(f"  ✓ Edge detector trained: {cfg.epochs} epochs, final lambda {result.lambdas[-1]}")
    return result


def validation_dice(model: UNet, cases: Sequence[PhantomCase]) -> float:
    scores = []
    with no_grad():
        for case in cases:
            pred = predict_volume(model, case.intensity, VolumeKind.MASK)
            scores.append(dice(pred, case.target_mask))
    return float(np.mean(scores))


def train_baseline(
    train_cases: Sequence[PhantomCase],
    valid_cases: Sequence[PhantomCase],
    cfg: BaselineTrainConfig,
    seed: int,
    log_path: Optional[Path] = None,
) -> TrainResult:
    """
    Train the image-to-mask baseline and return the epoch with the best
    validation Dice (earliest epoch on ties).

    Raises:
        ConfigError: Empty training or validation set
    """
    if not train_cases:
        raise ConfigError("train_baseline needs at least one training case")
    if not valid_cases:
        raise ConfigError("train_baseline needs a validation set for best-epoch selection")
    model = build_unet(cfg.unet, derive_seed(seed, "init", "baseline"))
    optimizer = Adam(model, lr=cfg.lr)
    size = cfg.unet.patch_size
    result = TrainResult(model=model)
    best_dice, best_state = -1.0, None

    for e in range(cfg.epochs):
        def inputs(item):
            i, case = item
            image, masks = case.intensity, [case.target_mask]
            if cfg.augment:
                image, masks = _augment_pair(image, masks, cfg.augment_policy, derive_seed(seed, "aug", e, i))
            target = _padded(masks[0].data, size)
            return _padded(image.data, size), target, target

        pairs = parallel_map(inputs, list(enumerate(train_cases)))
        rng = rng_for(seed, "baseline", "epoch", e)
        patches = _sample_patches(pairs, size, cfg, rng)
        train_loss = _run_epoch(model, optimizer, patches, cfg.batch_size, jaccard_loss, rng)

        valid = validation_dice(model, valid_cases)
        if valid > best_dice:
            best_dice, best_state = valid, snapshot(model)
            result.chosen_epoch = e + 1
        result.log.append({"epoch": e + 1, "train_loss": train_loss, "valid_metric": valid, "lambda": None})
        _emit(result.log[-1], log_path)

    model.load_state_dict(best_state)
    stats.record_epochs("baseline", cfg.epochs)
    logger.info(f"  ✓ Baseline trained: best epoch {result.chosen_epoch}/{cfg.epochs} (valid dice {best_dice:.4f})")
    return result

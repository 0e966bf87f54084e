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
Source-only training of the shape model.

Every sample of every epoch is regenerated from its analytic phantom: a random
edge sharpness and a geometric transform of the phantom spec (masks
re-rasterized in the new frame, so labels stay exact). Noise and local dropout
then degrade the edge map, and fresh query points are labelled by the oracle.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from condshape.augment import apply_geo_to_spec, draw_geo, edge_dropout, noise_inject
from condshape.edges import EdgeParams, edge_map_union
from condshape.errors import ConfigError, DomainTagError
from condshape.phantoms.generator import rasterize_all
from condshape.phantoms.models import Domain, PartRole, PhantomCase, PhantomSpec
from condshape.shape.model import (
    ShapeModel,
    ShapeModelConfig,
    build_shape_model,
    encode,
    point_features,
)
from condshape.shape.sampling import sample_training_points
from condshape.tensorgrad import Adam, bce_loss
from condshape.tools import stats
from condshape.tools.seeds import derive_seed, rng_for
from condshape.tools.workers import parallel_map
from condshape.volume import Volume3


@dataclass
class ShapeSample:
    """One augmented training sample"""
    edge_map: Volume3
    points: np.ndarray
    labels: np.ndarray
    lam: float
    spec: PhantomSpec


@dataclass
class ShapeTrainResult:
    model: ShapeModel
    log: List[Dict[str, Any]] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)


def require_source(cases: Sequence[PhantomCase]) -> None:
    """
    Raises:
        ConfigError: No cases
        DomainTagError: Any case is not tagged source
    """
    if not cases:
        raise ConfigError("shape model training needs at least one source case")
    bad = [c.case_id for c in cases if Domain(c.domain) is not Domain.SOURCE]
    if bad:
        raise DomainTagError(f"shape model trains on source cases only; got non-source cases {bad[:5]}")


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return rng_for(seed, "shape", "sample", epoch, index)


def draw_lambda(cfg: ShapeModelConfig, rng: np.random.Generator) -> float:
    """Edge sharpness of one sample: uniform over lambda_range, or lambda_fixed without jitter"""
    aug = cfg.augment
    return float(rng.uniform(*aug.lambda_range)) if aug.lambda_jitter else cfg.lambda_fixed


def make_sample(case: PhantomCase, cfg: ShapeModelConfig, seed: int, epoch: int, index: int) -> ShapeSample:
    aug = cfg.augment
    rng = sample_rng(seed, epoch, index)
    lam = draw_lambda(cfg, rng)

    grid = case.intensity
    spec = case.spec
    if aug.geometric:
        g = draw_geo(derive_seed(seed, "shape", "geo", epoch, index), aug)
        spec = apply_geo_to_spec(case.spec, g, grid.world_center())
        by_role = rasterize_all(spec, grid.dims, grid.spacing_mm)
        masks = [by_role[r.value] for r in PartRole.all()]
        cavity = by_role[PartRole.TARGET_CAVITY.value]
    else:
        masks = case.structure_masks()
        cavity = case.target_mask

    edge = edge_map_union(masks, EdgeParams(lam))
    if aug.intensity:
        edge = noise_inject(edge, aug.gauss_sigma, aug.speckle_sigma, derive_seed(seed, "shape", "noise", epoch, index))
    if aug.dropout:
        lo, hi = aug.dropout_regions
        n_regions = int(rng.integers(lo, hi + 1))
        edge = edge_dropout(edge, n_regions, aug.dropout_radius_mm, aug.dropout_blur_mm,
                            derive_seed(seed, "shape", "dropout", epoch, index), anchor=cavity)

    pts, labels = sample_training_points(spec, cfg.points_per_sample, derive_seed(seed, "shape", "points", epoch, index),
                                         grid=grid, sampling=cfg.sampling)
    return ShapeSample(edge_map=edge, points=pts, labels=labels, lam=lam, spec=spec)


def shape_step(model: ShapeModel, batch: Sequence[ShapeSample]):
    """Forward pass of a batch; returns the bce loss tensor"""
    pyr = encode([s.edge_map for s in batch], model)
    pts = np.concatenate([s.points for s in batch], axis=0)
    idx = np.concatenate([np.full(len(s.points), b, dtype=np.int64) for b, s in enumerate(batch)])
    labels = np.concatenate([s.labels for s in batch])
    occ = model.decode(point_features(pyr, pts, model.cfg.point_feature_config(), idx))
    return bce_loss(occ, labels)


def train_shape_model(
    source_cases: Sequence[PhantomCase],
    cfg: ShapeModelConfig,
    seed: int,
    log_path: Optional[Path] = None,
) -> ShapeTrainResult:
    """
    Train on source cases only and return the last-epoch model.

    Raises:
        ConfigError: Empty dataset
        DomainTagError: A case is not tagged source
    """
    require_source(source_cases)
    model = build_shape_model(cfg, derive_seed(seed, "init", "shape"))
    optimizer = Adam(model, lr=cfg.lr)
    result = ShapeTrainResult(model=model)
    model.train()

    for e in range(cfg.epochs):
        samples = parallel_map(lambda item: make_sample(item[1], cfg, seed, e, item[0]),
                               list(enumerate(source_cases)))
        order = rng_for(seed, "shape", "order", e).permutation(len(samples))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            optimizer.zero_grad()
            loss = shape_step(model, batch)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())

        lambdas = [s.lam for s in samples]
        result.lambdas.extend(lambdas)
        record = {"epoch": e + 1, "train_loss": float(np.mean(losses)), "valid_metric": None,
                  "lambda": float(np.mean(lambdas))}
        result.log.append(record)
        line = json.dumps(record, sort_keys=True)
        logger.info(line)
        if log_path is not None:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(log_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")

    stats.record_epochs("shape_model", cfg.epochs)
    logger.info(f"  ✓ Shape model trained: {cfg.epochs} epochs on {len(source_cases)} source cases")
    return result

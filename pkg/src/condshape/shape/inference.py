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
Dense inference, model files and the two segmenters compared in the sweep.
"""

import json
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from condshape import config
from condshape.errors import CheckpointFormatError
from condshape.nets.unet import UNet, predict_volume
from condshape.shape.model import (
    ShapeModel,
    ShapeModelConfig,
    build_shape_model,
    encode,
    point_features,
)
from condshape.tensorgrad import load_checkpoint, model_hash, no_grad, save_checkpoint
from condshape.tools import stats
from condshape.volume import Volume3, VolumeKind
from condshape.volume.volume import MASK_THRESHOLD


def query_grid(edge_map: Volume3, out_dims: Sequence[int]) -> Tuple[np.ndarray, Tuple[float, float, float]]:
    """
    Cell centers of an out_dims grid covering the edge map's world box.

    Returns:
        (P x 3 world points with z varying fastest, output spacing)
    """
    lo, hi = edge_map.world_bounds()
    dims = np.asarray(out_dims, dtype=np.int64)
    spacing = (hi - lo) / dims
    axes = [lo[a] + (np.arange(dims[a]) + 0.5) * spacing[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    return pts, tuple(float(s) for s in spacing)


def infer_mask(
    model: ShapeModel,
    edge_map: Volume3,
    out_dims: Optional[Sequence[int]] = None,
    chunk_points: Optional[int] = None,
) -> Tuple[Volume3, Volume3]:
    """
    Encode once, decode the occupancy at every output voxel center.

    out_dims may differ from the edge map's dims; the output grid covers the
    same world box.

    Returns:
        (occupancy volume, mask thresholded at 0.5)
    """
    out_dims = tuple(int(n) for n in (out_dims or edge_map.dims))
    chunk = chunk_points or config.INFER_CHUNK_POINTS
    pf = model.cfg.point_feature_config()
    pts, spacing = query_grid(edge_map, out_dims)

    was_training = model.training
    model.eval()
    try:
        with no_grad():
            pyr = encode(edge_map, model)
            occ = np.empty(len(pts), dtype=np.float64)
            for start in range(0, len(pts), chunk):
                block = pts[start:start + chunk]
                occ[start:start + chunk] = model.decode(point_features(pyr, block, pf)).data
    finally:
        if was_training:
            model.train()

    occ = np.clip(occ.reshape(out_dims), 0.0, 1.0)
    occupancy = Volume3(occ, spacing_mm=spacing, kind=VolumeKind.OCCUPANCY)
    mask = occupancy.with_data((occ >= MASK_THRESHOLD).astype(np.float64), kind=VolumeKind.MASK)
    return occupancy, mask


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def shape_hyperparameters(cfg: ShapeModelConfig) -> dict:
    return {
        "shape_model": cfg.model_dump(mode="json"),
        "point_features": {"neighbor_distance_mm": cfg.neighbor_distance_mm},
        "levels": cfg.levels,
        "channels": cfg.scaled_channels(),
        "decoder_widths": [cfg.feature_length] + list(cfg.decoder_widths) + [1],
    }


def save_shape_model(model: ShapeModel, path: Union[str, Path]) -> str:
    """Checkpoint plus <ckpt>.json sidecar; returns the checkpoint sha256"""
    hyper = shape_hyperparameters(model.cfg)
    digest = save_checkpoint(model, path, hyperparameters=hyper)
    sidecar_path(path).write_text(json.dumps(hyper, indent=2, sort_keys=True), encoding="utf-8")
    return digest


def load_shape_model(path: Union[str, Path]) -> ShapeModel:
    """
    Raises:
        CheckpointFormatError: Missing or unreadable sidecar
    """
    side = sidecar_path(path)
    try:
        hyper = json.loads(side.read_text(encoding="utf-8"))
        cfg = ShapeModelConfig.model_validate(hyper["shape_model"])
    except (OSError, ValueError, KeyError) as e:
        raise CheckpointFormatError(f"cannot read shape model sidecar {side}: {e}") from e
    model = build_shape_model(cfg, seed=0)
    load_checkpoint(model, path)
    return model


def shape_model_hash(model: ShapeModel) -> str:
    return model_hash(model, shape_hyperparameters(model.cfg))


class DcsmSegmenter:
    """Target intensity -> edge detector -> frozen shape model -> mask"""

    name = "dcsm"

    def __init__(self, edge_detector: UNet, shape_model: ShapeModel, out_dims: Optional[Sequence[int]] = None):
        self.edge_detector = edge_detector
        self.shape_model = shape_model
        self.out_dims = out_dims
        self.last_occupancy: Optional[Volume3] = None
        self.seconds: List[float] = []

    def segment(self, intensity: Volume3) -> Volume3:
        start = time.perf_counter()
        edge = predict_volume(self.edge_detector, intensity, VolumeKind.EDGE_MAP)
        self.last_occupancy, mask = infer_mask(self.shape_model, edge, self.out_dims)
        elapsed = time.perf_counter() - start
        self.seconds.append(elapsed)
        stats.record_inference(elapsed)
        logger.debug(f"dcsm inference {elapsed:.3f} s")
        return mask


class BaselineSegmenter:
    """Target intensity -> image-to-mask UNet"""

    name = "baseline"

    def __init__(self, model: UNet):
        self.model = model
        self.seconds: List[float] = []

    def segment(self, intensity: Volume3) -> Volume3:
        start = time.perf_counter()
        mask = predict_volume(self.model, intensity, VolumeKind.MASK)
        elapsed = time.perf_counter() - start
        self.seconds.append(elapsed)
        stats.record_inference(elapsed)
        logger.debug(f"baseline inference {elapsed:.3f} s")
        return mask

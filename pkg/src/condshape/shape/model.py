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
Implicit shape model conditioned on edge maps.

An encoder turns the edge map into N feature grids (level 1 at input
resolution, each further level halved). A query point x is described by the
features of the 7-point stencil {x, x +- d along each axis} sampled from every
level, stacked stencil-major and level-minor, and a point-wise MLP maps that
vector to an occupancy in (0, 1).
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from condshape.augment import AugmentConfig
from condshape.errors import ConfigError, KindError, ShapeError
from condshape.tensorgrad import (
    ConvBlock,
    LeakyReLU,
    Linear,
    MaxDownsample,
    Module,
    Sigmoid,
    Tensor,
    apply_layer,
    concat,
    trilinear_gather,
)
from condshape.tensorgrad.nn import mlp_widths
from condshape.volume import Volume3, VolumeKind

STENCIL_POINTS = 7


@dataclass(frozen=True)
class PointFeatureConfig:
    """Neighbour distance d (mm) of the 7-point sampling stencil"""
    neighbor_distance_mm: float = 2.0

    def __post_init__(self):
        if not (np.isfinite(self.neighbor_distance_mm) and self.neighbor_distance_mm > 0):
            raise ConfigError(f"neighbor_distance_mm must be > 0, got {self.neighbor_distance_mm}")

    def offsets(self) -> np.ndarray:
        """7 x 3 world offsets: origin, then +x, -x, +y, -y, +z, -z"""
        d = self.neighbor_distance_mm
        out = np.zeros((STENCIL_POINTS, 3))
        for axis in range(3):
            out[1 + 2 * axis, axis] = d
            out[2 + 2 * axis, axis] = -d
        return out


class SamplingConfig(BaseModel):
    """Training query points: near/far jitter around the surface, rest uniform in the box"""
    near_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    far_fraction: float = Field(default=0.4, ge=0.0, le=1.0)
    near_sigma_mm: float = Field(default=2.0, gt=0.0)
    far_sigma_mm: float = Field(default=6.0, gt=0.0)

    @model_validator(mode="after")
    def check_fractions(self):
        if self.near_fraction + self.far_fraction > 1.0:
            raise ValueError("near_fraction + far_fraction must not exceed 1")
        return self


class ShapeModelConfig(BaseModel):
    """
    Attributes:
        channels: Encoder channels per level (N = len(channels) >= 2)
        width: Multiplier applied to every encoder channel count
        decoder_widths: Hidden layer widths of the point decoder
        lambda_fixed: Edge sharpness used when lambda jitter is disabled
    """
    channels: List[int] = Field(default_factory=lambda: [8, 16, 32, 64])
    width: float = Field(default=1.0, gt=0.0)
    neighbor_distance_mm: float = Field(default=2.0, gt=0.0)
    decoder_widths: List[int] = Field(default_factory=lambda: [256, 256])
    points_per_sample: int = Field(default=2048, ge=1)
    batch_size: int = Field(default=2, ge=1)
    epochs: int = Field(default=10, ge=1)
    lr: float = Field(default=0.001, gt=0.0)
    lambda_fixed: float = Field(default=1.0, gt=0.0)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    augment: AugmentConfig = Field(default_factory=lambda: AugmentConfig(translation_mm=5.0))

    @model_validator(mode="after")
    def check_levels(self):
        if len(self.channels) < 2 or any(c < 1 for c in self.channels):
            raise ValueError("shape model needs at least 2 encoder levels with positive channel counts")
        if any(w < 1 for w in self.decoder_widths):
            raise ValueError("decoder_widths must be positive")
        return self

    @property
    def levels(self) -> int:
        return len(self.channels)

    def scaled_channels(self) -> List[int]:
        return [max(1, int(round(c * self.width))) for c in self.channels]

    def point_feature_config(self) -> PointFeatureConfig:
        return PointFeatureConfig(self.neighbor_distance_mm)

    @property
    def feature_length(self) -> int:
        return STENCIL_POINTS * sum(self.scaled_channels())


@dataclass
class FeatureLevel:
    """One feature grid (B x C x X x Y x Z) with its own grid-to-world map"""
    features: Tensor
    spacing: np.ndarray
    origin: np.ndarray

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def to_index(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.origin) / self.spacing


@dataclass
class FeaturePyramid:
    levels: List[FeatureLevel]

    @property
    def channels(self) -> List[int]:
        return [level.channels for level in self.levels]

    @property
    def feature_length(self) -> int:
        return STENCIL_POINTS * sum(self.channels)


def level_frame(spacing: Sequence[float], k: int):
    """
    World map of level k (1-based): a cell pools 2^(k-1) input voxels per axis,
    so its center sits at the mean of their centers.
    """
    s = np.asarray(spacing, dtype=np.float64)
    factor = 2 ** (k - 1)
    return s * factor, (factor - 1) / 2.0 * s


class ShapeModel(Module):
    def __init__(self, cfg: ShapeModelConfig, seed: int):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        chans = cfg.scaled_channels()

        self.encoders: List[ConvBlock] = []
        c_in = 1
        for k, c in enumerate(chans):
            self.encoders.append(ConvBlock(self, f"enc{k}", c_in, c, rng))
            c_in = c
        self.down = MaxDownsample()

        widths = [STENCIL_POINTS * sum(chans)] + list(cfg.decoder_widths) + [1]
        self.decoder: List[Linear] = [
            Linear(self, f"dec{i}", a, b, rng) for i, (a, b) in enumerate(mlp_widths(widths))
        ]
        self.act = LeakyReLU()
        self.out = Sigmoid()

    @property
    def stride(self) -> int:
        return 2 ** (self.cfg.levels - 1)

    def encode_tensor(self, x: Tensor) -> List[Tensor]:
        side = x.shape[2:]
        if any(n % self.stride for n in side):
            raise ShapeError(f"shape encoder: spatial dims {side} must be divisible by {self.stride} "
                             f"({self.cfg.levels} levels)")
        grids = []
        for k, block in enumerate(self.encoders):
            if k:
                x = apply_layer(self.down, x)
            x = block(x)
            grids.append(x)
        return grids

    def decode(self, features: Tensor) -> Tensor:
        """P x 7*sum(C) features to P occupancies"""
        h = features
        for i, layer in enumerate(self.decoder):
            h = apply_layer(layer, h)
            h = apply_layer(self.act if i < len(self.decoder) - 1 else self.out, h)
        return h.reshape(h.shape[0])


def build_shape_model(cfg: ShapeModelConfig, seed: int) -> ShapeModel:
    model = ShapeModel(cfg, seed)
    logger.debug(f"Built shape model: levels={cfg.levels} channels={cfg.scaled_channels()} "
                 f"features={cfg.feature_length} params={model.num_parameters()}")
    return model


def edge_tensor(edge_maps: Sequence[Volume3]) -> Tensor:
    for e in edge_maps:
        if e.kind is not VolumeKind.EDGE_MAP:
            raise KindError(f"shape model expects edge maps, got {e.kind.value}")
    return Tensor(np.stack([e.data[None] for e in edge_maps]))


def encode(edge_map: Union[Volume3, Sequence[Volume3]], model: ShapeModel) -> FeaturePyramid:
    """
    Feature pyramid of one edge map (or a batch on a shared grid).

    Raises:
        KindError: Input is not an edge map
        ShapeError: Spatial side not divisible by 2^(N-1)
    """
    maps = [edge_map] if isinstance(edge_map, Volume3) else list(edge_map)
    spacing = maps[0].spacing_mm
    grids = model.encode_tensor(edge_tensor(maps))
    levels = []
    for k, grid in enumerate(grids, start=1):
        s, origin = level_frame(spacing, k)
        levels.append(FeatureLevel(grid, s, origin))
    return FeaturePyramid(levels)


def point_features(
    pyr: FeaturePyramid,
    pts: np.ndarray,
    pf: PointFeatureConfig,
    batch_idx: Optional[np.ndarray] = None,
) -> Tensor:
    """
    P x 7*sum(C) stacked stencil features for world points (P x 3, or a single
    point). batch_idx picks the pyramid sample per point (default 0).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if batch_idx is None:
        batch_idx = np.zeros(len(pts), dtype=np.int64)
    blocks = []
    for offset in pf.offsets():
        q = pts + offset
        for level in pyr.levels:
            blocks.append(trilinear_gather(level.features, batch_idx, level.to_index(q)))
    return concat(blocks, axis=1)


def decode_occupancy(features: Tensor, model: ShapeModel) -> Tensor:
    """
    Raises:
        ShapeError: Feature width differs from the decoder input width
    """
    return model.decode(features)

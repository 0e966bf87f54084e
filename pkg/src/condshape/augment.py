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
Seeded augmentations shared by the trainers.

- geometric: rotation (Rz @ Ry @ Rx) and isotropic scale about the volume
  center, then translation; applied analytically to a PhantomSpec or by
  inverse-mapped trilinear resampling to a voxel grid
- intensity: Gaussian plus speckle noise, clamped to [0, 1]
- edge dropout: local Gaussian blurring inside random spheres
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import ndimage

from condshape.errors import ConfigError
from condshape.phantoms.generator import euler_rotation
from condshape.phantoms.models import PhantomPart, PhantomSpec
from condshape.volume import Volume3, VolumeKind, sample_points
from condshape.volume.volume import MASK_THRESHOLD

MAX_ROTATION_DEG = 150.0
MAX_TRANSLATION_MM = 40.0
MIN_SCALE, MAX_SCALE = 0.7, 1.0


class AugmentConfig(BaseModel):
    """Augmentation policy; serialized with the training config"""
    rotation_deg: float = Field(default=150.0, ge=0.0, le=MAX_ROTATION_DEG)
    translation_mm: float = Field(default=40.0, ge=0.0, le=MAX_TRANSLATION_MM)
    scale_min: float = Field(default=0.7, ge=MIN_SCALE, le=MAX_SCALE)
    scale_max: float = Field(default=1.0, ge=MIN_SCALE, le=MAX_SCALE)
    gauss_sigma: float = Field(default=0.05, ge=0.0)
    speckle_sigma: float = Field(default=0.1, ge=0.0)
    dropout_regions: Tuple[int, int] = (1, 4)
    dropout_radius_mm: Tuple[float, float] = (2.0, 6.0)
    dropout_blur_mm: float = Field(default=2.0, ge=0.0)
    lambda_range: Tuple[float, float] = (0.01, 2.0)
    geometric: bool = True
    intensity: bool = True
    dropout: bool = True
    lambda_jitter: bool = True

    @model_validator(mode="after")
    def check_ranges(self):
        if self.scale_min > self.scale_max:
            raise ValueError("scale_min must be <= scale_max")
        lo, hi = self.dropout_regions
        if not 1 <= lo <= hi:
            raise ValueError("dropout_regions must satisfy 1 <= min <= max")
        if not 0 <= self.dropout_radius_mm[0] <= self.dropout_radius_mm[1]:
            raise ValueError("dropout_radius_mm must satisfy 0 <= min <= max")
        if not 0 < self.lambda_range[0] <= self.lambda_range[1]:
            raise ValueError("lambda_range must satisfy 0 < min <= max")
        return self

    @classmethod
    def rigid(cls, rotation_deg: float, translation_mm: float) -> "AugmentConfig":
        """Rotation and translation only (scale fixed at 1), no intensity or dropout"""
        return cls(rotation_deg=rotation_deg, translation_mm=translation_mm, scale_min=1.0, scale_max=1.0,
                   intensity=False, dropout=False, lambda_jitter=False)


@dataclass(frozen=True)
class GeoParams:
    rotation_deg: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation_mm: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        if any(abs(a) > MAX_ROTATION_DEG for a in self.rotation_deg):
            raise ConfigError(f"rotation must lie in [-150, 150] degrees, got {self.rotation_deg}")
        if any(abs(t) > MAX_TRANSLATION_MM for t in self.translation_mm):
            raise ConfigError(f"translation must lie in [-40, 40] mm, got {self.translation_mm}")
        if not MIN_SCALE <= self.scale <= MAX_SCALE:
            raise ConfigError(f"scale must lie in [0.7, 1.0], got {self.scale}")

    @property
    def rotation_matrix(self) -> np.ndarray:
        return euler_rotation(self.rotation_deg)

    def to_dict(self) -> dict:
        return {"rotation_deg": list(self.rotation_deg), "translation_mm": list(self.translation_mm), "scale": self.scale}


def draw_geo(seed: int, cfg: Optional[AugmentConfig] = None) -> GeoParams:
    """Uniform draws of rotation, translation (per axis) and isotropic scale"""
    cfg = cfg or AugmentConfig()
    rng = np.random.default_rng(seed)
    rot = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg, 3)
    trans = rng.uniform(-cfg.translation_mm, cfg.translation_mm, 3)
    scale = rng.uniform(cfg.scale_min, cfg.scale_max) if cfg.scale_max > cfg.scale_min else cfg.scale_min
    return GeoParams(rotation_deg=tuple(float(a) for a in rot),
                     translation_mm=tuple(float(t) for t in trans),
                     scale=float(scale))


def transform_points(pts: np.ndarray, g: GeoParams, center: Sequence[float]) -> np.ndarray:
    """x' = c + s R (x - c) + t, for row-vector points"""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    c = np.asarray(center, dtype=np.float64)
    rel = pts - c
    moved = g.scale * rel @ g.rotation_matrix.T
    return pts + (moved - rel) + np.asarray(g.translation_mm)


def apply_geo_to_spec(spec: PhantomSpec, g: GeoParams, center: Sequence[float]) -> PhantomSpec:
    """
    Move every part: center maps like a point, radii scale by s, rotation
    becomes R_g @ R. Part count and roles are preserved.
    """
    rot = g.rotation_matrix
    parts = []
    for part in spec.parts:
        new_center = transform_points(np.asarray([part.center]), g, center)[0]
        new_rot = rot @ part.rotation_matrix
        parts.append(PhantomPart(
            center=tuple(new_center),
            radii=tuple(r * g.scale for r in part.radii),
            rotation=tuple(tuple(row) for row in new_rot),
            role=part.role,
        ))
    return PhantomSpec(parts=parts, seed=spec.seed)


def apply_geo_to_volume(vol: Volume3, g: GeoParams) -> Volume3:
    """
    Warp a voxel grid about its world center by inverse mapping and trilinear
    sampling (clamped at faces). Masks are re-binarized at 0.5.
    """
    c = vol.world_center()
    out_pts = vol.voxel_centers().reshape(-1, 3)
    # inverse: x = c + R^T (x' - c - t) / s
    src = c + ((out_pts - c - np.asarray(g.translation_mm)) / g.scale) @ g.rotation_matrix
    values = sample_points(vol, src).reshape(vol.dims)
    if vol.kind is VolumeKind.MASK:
        values = (values >= MASK_THRESHOLD).astype(np.float64)
    elif vol.kind in (VolumeKind.EDGE_MAP, VolumeKind.OCCUPANCY, VolumeKind.EDGE_SET):
        values = np.clip(values, 0.0, 1.0)
    return vol.with_data(values)


def noise_inject(vol: Volume3, gauss_sigma: float, speckle_sigma: float, seed: int) -> Volume3:
    """v' = clip(v (1 + eta_s) + eta_g, 0, 1), independent per voxel"""
    if gauss_sigma < 0 or speckle_sigma < 0:
        raise ConfigError(f"noise sigmas must be >= 0, got gauss={gauss_sigma} speckle={speckle_sigma}")
    if gauss_sigma == 0 and speckle_sigma == 0:
        return vol
    rng = np.random.default_rng(seed)
    speckle = rng.normal(0.0, speckle_sigma, vol.dims) if speckle_sigma > 0 else 0.0
    gauss = rng.normal(0.0, gauss_sigma, vol.dims) if gauss_sigma > 0 else 0.0
    return vol.with_data(np.clip(vol.data * (1.0 + speckle) + gauss, 0.0, 1.0))


@dataclass(frozen=True)
class DropoutRegion:
    center_mm: Tuple[float, float, float]
    radius_mm: float


def draw_dropout_regions(
    vol: Volume3,
    n_regions: int,
    radius_range_mm: Tuple[float, float],
    seed: int,
    anchor: Optional[Volume3] = None,
) -> List[DropoutRegion]:
    """
    Spheres with uniform centers in the world box and uniform radii. With an
    anchor mask, the first sphere is centered on a boundary voxel of the anchor.
    """
    if n_regions < 1:
        raise ConfigError(f"n_regions must be >= 1, got {n_regions}")
    rng = np.random.default_rng(seed)
    lo, hi = vol.world_bounds()
    centers = rng.uniform(lo, hi, size=(n_regions, 3))
    radii = rng.uniform(radius_range_mm[0], radius_range_mm[1], size=n_regions)
    if anchor is not None:
        boundary = _boundary_voxels(anchor)
        if boundary.size:
            idx = boundary[rng.integers(len(boundary))]
            centers[0] = idx * anchor.spacing
    return [DropoutRegion(tuple(float(v) for v in c), float(r)) for c, r in zip(centers, radii)]


def _boundary_voxels(mask: Volume3) -> np.ndarray:
    fg = mask.data > 0
    inner = ndimage.binary_erosion(fg, border_value=0)
    return np.argwhere(fg & ~inner)


def apply_dropout(vol: Volume3, regions: Sequence[DropoutRegion], blur_sigma_mm: float) -> Volume3:
    """Replace values strictly inside any region by the Gaussian-blurred field"""
    if not regions:
        return vol
    pts = vol.voxel_centers()
    inside = np.zeros(vol.dims, dtype=bool)
    for r in regions:
        inside |= np.linalg.norm(pts - np.asarray(r.center_mm), axis=-1) < r.radius_mm
    if not inside.any():
        return vol
    sigma = blur_sigma_mm / vol.spacing
    blurred = ndimage.gaussian_filter(vol.data, sigma=sigma, mode="nearest")
    return vol.with_data(np.where(inside, blurred, vol.data))


def edge_dropout(
    edge_map: Volume3,
    n_regions: int,
    radius_range_mm: Tuple[float, float],
    blur_sigma_mm: float,
    seed: int,
    anchor: Optional[Volume3] = None,
) -> Volume3:
    """
    Local edge blurring: inside each random sphere the map is replaced by its
    Gaussian blur, voxels outside every sphere are unchanged bitwise.
    """
    regions = draw_dropout_regions(edge_map, n_regions, radius_range_mm, seed, anchor)
    return apply_dropout(edge_map, regions, blur_sigma_mm)


__all__ = [
    'AugmentConfig',
    'DropoutRegion',
    'GeoParams',
    'apply_dropout',
    'apply_geo_to_spec',
    'apply_geo_to_volume',
    'draw_dropout_regions',
    'draw_geo',
    'edge_dropout',
    'noise_inject',
    'transform_points',
]

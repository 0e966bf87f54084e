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
3D volume model and sampling.

Coordinate conventions:
- Arrays are indexed [i, j, k] = [x, y, z]; on disk the payload is x-fastest.
- World coordinates are in mm with the origin at the center of voxel (0, 0, 0),
  so voxel (i, j, k) sits at (i*sx, j*sy, k*sz).
- The world bounding box is every voxel center +/- half a spacing.
- Sampling outside the outermost voxel centers uses clamped replication.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from condshape.errors import VolumeError

AXES = ("x", "y", "z")
MASK_THRESHOLD = 0.5


class VolumeKind(str, Enum):
    MASK = "mask"
    EDGE_SET = "edge_set"
    EDGE_MAP = "edge_map"
    INTENSITY = "intensity"
    OCCUPANCY = "occupancy"


class WorldPoint(NamedTuple):
    """Point in world millimetres"""
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class Volume3:
    """
    Immutable scalar grid with world spacing.

    The payload is always held as a read-only float64 array of shape
    (nx, ny, nz). Files store float32, so values read back from disk are
    float32-representable.

    Attributes:
        data: Voxel values indexed [x, y, z]
        spacing_mm: Voxel size per axis in mm
        kind: What the values mean (mask, edge set, edge map, intensity, occupancy)
    """
    data: np.ndarray
    spacing_mm: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: VolumeKind = VolumeKind.INTENSITY

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise VolumeError(f"volume data must be a non-empty 3D array, got shape {arr.shape}")

        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3:
            raise VolumeError(f"spacing_mm needs 3 components, got {len(spacing)}")
        for axis, s in zip(AXES, spacing):
            if not (math.isfinite(s) and s > 0):
                raise VolumeError(f"spacing along {axis} must be a positive finite number, got {s}")

        try:
            kind = VolumeKind(self.kind)
        except ValueError as e:
            raise VolumeError(f"unknown volume kind: {self.kind!r}") from e

        if kind is VolumeKind.MASK:
            if not np.all((arr == 0.0) | (arr == 1.0)):
                raise VolumeError("mask volumes may only contain 0.0 and 1.0")
        elif kind in (VolumeKind.EDGE_MAP, VolumeKind.OCCUPANCY, VolumeKind.EDGE_SET):
            if not np.all((arr >= 0.0) & (arr <= 1.0)):
                raise VolumeError(f"{kind.value} values must lie in [0, 1]")

        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing_mm", spacing)
        object.__setattr__(self, "kind", kind)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.spacing_mm, dtype=np.float64)

    @property
    def extent_mm(self) -> np.ndarray:
        """Edge length of the world bounding box per axis"""
        return np.asarray(self.dims, dtype=np.float64) * self.spacing

    def world_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the world bounding box"""
        half = self.spacing / 2.0
        upper = (np.asarray(self.dims, dtype=np.float64) - 1.0) * self.spacing + half
        return -half, upper

    def world_center(self) -> np.ndarray:
        lo, hi = self.world_bounds()
        return (lo + hi) / 2.0

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel center, shape (nx, ny, nz, 3)"""
        axes = [np.arange(n, dtype=np.float64) * s for n, s in zip(self.dims, self.spacing_mm)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def with_data(self, data: np.ndarray, kind: VolumeKind = None) -> "Volume3":
        """New volume on the same grid"""
        return Volume3(data=data, spacing_mm=self.spacing_mm, kind=kind or self.kind)

    def same_grid(self, other: "Volume3") -> bool:
        return self.dims == other.dims and np.allclose(self.spacing, other.spacing, rtol=0, atol=1e-9)

    def count(self) -> int:
        """Number of nonzero voxels"""
        return int(np.count_nonzero(self.data))


def _lerp(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
    # exact at t=0 and for a == b
    return a + t * (b - a)


def sample_indices(data: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    Trilinear interpolation at continuous voxel indices.

    Args:
        data: Array (nx, ny, nz) or (C, nx, ny, nz)
        u: Continuous indices, shape (P, 3); clamped into [0, n-1] per axis

    Returns:
        Values of shape (P,) or (C, P)
    """
    dims = np.asarray(data.shape[-3:])
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, dims - 1.0)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, np.maximum(dims - 2, 0))
    i1 = np.minimum(i0 + 1, dims - 1)
    t = np.clip(u - i0, 0.0, 1.0)

    x0, y0, z0 = i0.T
    x1, y1, z1 = i1.T
    tx, ty, tz = t.T

    v = data
    c00 = _lerp(v[..., x0, y0, z0], v[..., x1, y0, z0], tx)
    c10 = _lerp(v[..., x0, y1, z0], v[..., x1, y1, z0], tx)
    c01 = _lerp(v[..., x0, y0, z1], v[..., x1, y0, z1], tx)
    c11 = _lerp(v[..., x0, y1, z1], v[..., x1, y1, z1], tx)
    c0 = _lerp(c00, c10, ty)
    c1 = _lerp(c01, c11, ty)
    return _lerp(c0, c1, tz)


def sample_points(vol: Volume3, pts: np.ndarray, clamp: bool = True) -> np.ndarray:
    """
    Vectorised trilinear sampling at world points.

    Args:
        vol: Source volume
        pts: World points, shape (P, 3)
        clamp: If False, points outside the world bounding box raise VolumeError

    Returns:
        Sampled values, shape (P,)
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if not clamp:
        _check_inside(vol, pts)
    return sample_indices(vol.data, pts / vol.spacing)


def _check_inside(vol: Volume3, pts: np.ndarray) -> None:
    if not np.all(np.isfinite(pts)):
        raise VolumeError("sample point has non-finite coordinates")
    lo, hi = vol.world_bounds()
    for a, axis in enumerate(AXES):
        bad = (pts[:, a] < lo[a]) | (pts[:, a] > hi[a])
        if np.any(bad):
            value = pts[np.argmax(bad), a]
            raise VolumeError(
                f"point outside volume along {axis}: {value:.6g} not in [{lo[a]:.6g}, {hi[a]:.6g}]"
            )


def trilinear_sample(vol: Volume3, pt: Sequence[float]) -> float:
    """
    Interpolate the volume at a single world point.

    Raises:
        VolumeError: If the point is outside the world bounding box (names the axis)
    """
    return float(sample_points(vol, np.asarray([pt], dtype=np.float64), clamp=False)[0])


def resample(vol: Volume3, new_spacing_mm: Sequence[float]) -> Volume3:
    """
    Resample onto a grid with new spacing that covers the same world extent.

    New voxel centers are placed at lower_bound + (j + 0.5) * new_spacing in the
    source frame and evaluated by trilinear sampling. Masks are re-binarized at 0.5.

    Raises:
        VolumeError: Non-positive spacing, or an axis that would end up with zero voxels
    """
    new_spacing = np.asarray([float(s) for s in new_spacing_mm], dtype=np.float64)
    if new_spacing.shape != (3,) or not np.all(new_spacing > 0):
        raise VolumeError(f"new spacing must be 3 positive values, got {list(new_spacing_mm)}")

    new_dims = np.rint(vol.extent_mm / new_spacing).astype(np.int64)
    for axis, n in zip(AXES, new_dims):
        if n < 1:
            raise VolumeError(f"resampling leaves zero voxels along {axis}")

    ratio = new_spacing / vol.spacing
    axes = [(np.arange(n, dtype=np.float64) + 0.5) * r - 0.5 for n, r in zip(new_dims, ratio)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    u = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    values = sample_indices(vol.data, u).reshape(tuple(new_dims))

    if vol.kind is VolumeKind.MASK:
        values = (values >= MASK_THRESHOLD).astype(np.float64)
    elif vol.kind in (VolumeKind.EDGE_MAP, VolumeKind.OCCUPANCY, VolumeKind.EDGE_SET):
        values = np.clip(values, 0.0, 1.0)
    return Volume3(data=values, spacing_mm=tuple(new_spacing), kind=vol.kind)


def binarize(vol: Volume3, threshold: float = MASK_THRESHOLD) -> Volume3:
    """Threshold any volume into a mask (value >= threshold is foreground)"""
    return vol.with_data((vol.data >= threshold).astype(np.float64), kind=VolumeKind.MASK)


def pad_to_multiple(arr: np.ndarray, multiple: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Replicate-pad the trailing three axes up to a multiple of `multiple`; returns (padded, original dims)"""
    dims = arr.shape[-3:]
    pads = [(0, 0)] * (arr.ndim - 3) + [(0, (-n) % multiple) for n in dims]
    return np.pad(arr, pads, mode="edge"), tuple(dims)


def extract_patch(arr: np.ndarray, corner: Sequence[int], size: int) -> np.ndarray:
    """Cube of side `size` starting at `corner` from the trailing three axes"""
    x, y, z = (int(c) for c in corner)
    return arr[..., x:x + size, y:y + size, z:z + size]

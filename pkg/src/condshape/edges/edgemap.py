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
Edge maps from binary masks.

    q = Sobel(p)                      edge set: voxels with nonzero 3D Sobel gradient
    E = exp(-lambda * EDT(q))         edge map: 1 on q, decaying with distance in mm

plus the cosine schedule used to sharpen lambda over training epochs.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from loguru import logger
from scipy import ndimage

from condshape import config
from condshape.errors import ConfigError, KindError, VolumeError
from condshape.volume import Volume3, VolumeKind


@dataclass(frozen=True)
class EdgeParams:
    """Edge-map sharpness, per mm"""
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ConfigError(f"lambda must be > 0, got {self.lam}")


@dataclass(frozen=True)
class LambdaSchedule:
    """Cosine annealing of lambda from lambda_start (epoch 0) to lambda_end (epoch total_epochs)"""
    lambda_start: float = 0.001
    lambda_end: float = 2.0
    total_epochs: int = 1

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")


def _require_kind(vol: Volume3, kind: VolumeKind, op: str) -> None:
    if vol.kind is not kind:
        raise KindError(f"{op} expects a {kind.value} volume, got {vol.kind.value}")


def sobel_edges(mask: Volume3) -> Volume3:
    """
    Edge set of a binary mask.

    Applies the three separable 3x3x3 Sobel kernels (derivative [-1, 0, 1] on one
    axis, smoothing [1, 2, 1] on the other two) with replicate padding. A voxel is
    an edge iff its gradient magnitude is nonzero.

    Raises:
        KindError: Input is not a mask
    """
    _require_kind(mask, VolumeKind.MASK, "sobel_edges")
    p = mask.data
    magnitude = np.zeros_like(p)
    for axis in range(3):
        g = ndimage.sobel(p, axis=axis, mode="nearest")
        magnitude += g * g
    return mask.with_data((magnitude > 0).astype(np.float64), kind=VolumeKind.EDGE_SET)


def _envelope_1d(f: np.ndarray, spacing: float) -> np.ndarray:
    """
    Lower envelope of parabolas along one scanline.

    Computes d(p) = min_q (spacing*(p - q))^2 + f(q) exactly; infinite f(q) are
    not sites.
    """
    n = f.shape[0]
    sites = np.flatnonzero(np.isfinite(f))
    if sites.size == 0:
        return np.full(n, np.inf)

    pos = np.arange(n, dtype=np.float64) * spacing
    v = np.zeros(sites.size, dtype=np.int64)
    z = np.zeros(sites.size + 1, dtype=np.float64)
    k = 0
    v[0] = sites[0]
    z[0] = -np.inf
    z[1] = np.inf
    def intersect(q: int, r: int) -> float:
        return ((f[q] + pos[q] ** 2) - (f[r] + pos[r] ** 2)) / (2.0 * (pos[q] - pos[r]))

    for q in sites[1:]:
        s = intersect(q, v[k])
        # z[0] is -inf, so k never drops below 0
        while s <= z[k]:
            k -= 1
            s = intersect(q, v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf

    out = np.empty(n, dtype=np.float64)
    k = 0
    for p in range(n):
        while z[k + 1] < pos[p]:
            k += 1
        out[p] = (pos[p] - pos[v[k]]) ** 2 + f[v[k]]
    return out


def envelope_edt(edges: Volume3, axis_order: Sequence[int] = (0, 1, 2)) -> np.ndarray:
    """Exact EDT by separable lower-envelope passes in the given axis order; returns mm distances"""
    f = np.where(edges.data > 0, 0.0, np.inf)
    if sorted(axis_order) != [0, 1, 2]:
        raise VolumeError(f"axis_order must be a permutation of (0, 1, 2), got {tuple(axis_order)}")
    for axis in axis_order:
        f = np.apply_along_axis(_envelope_1d, axis, f, edges.spacing_mm[axis])
    return np.sqrt(f)


def edt(edges: Volume3, backend: Optional[str] = None, axis_order: Sequence[int] = (0, 1, 2)) -> Volume3:
    """
    Exact Euclidean distance (mm) from each voxel center to the nearest edge voxel center.

    Honors anisotropic spacing. Edge voxels map to 0; an empty edge set maps every
    voxel to +inf. The result is an unconstrained scalar volume (kind intensity).

    Args:
        edges: Edge-set volume
        backend: 'scipy' or 'envelope'; defaults to config.EDT_BACKEND
        axis_order: Pass order for the envelope backend

    Raises:
        KindError: Input is not an edge set
    """
    _require_kind(edges, VolumeKind.EDGE_SET, "edt")
    backend = backend or config.EDT_BACKEND

    if not np.any(edges.data > 0):
        dist = np.full(edges.dims, np.inf)
    elif backend == "scipy":
        dist = ndimage.distance_transform_edt(edges.data == 0, sampling=edges.spacing_mm)
    elif backend == "envelope":
        dist = envelope_edt(edges, axis_order)
    else:
        raise ConfigError(f"unknown EDT backend {backend!r}")
    return edges.with_data(dist, kind=VolumeKind.INTENSITY)


def _distance_to_map(dist: np.ndarray, params: EdgeParams) -> np.ndarray:
    # exp(-inf) == 0 for empty edge sets
    return np.exp(-params.lam * dist)


def edge_map(mask: Volume3, params: EdgeParams) -> Volume3:
    """
    Edge map E = exp(-lambda * EDT(sobel_edges(mask))).

    Values lie in [0, 1], are exactly 1 on edge voxels and exactly 0 everywhere
    when the mask has no edges.
    """
    dist = edt(sobel_edges(mask))
    return mask.with_data(_distance_to_map(dist.data, params), kind=VolumeKind.EDGE_MAP)


def union_edges(masks: Iterable[Volume3]) -> Volume3:
    """Union of the edge sets of several masks on one grid"""
    masks = list(masks)
    if not masks:
        raise VolumeError("union_edges needs at least one mask")
    acc = np.zeros(masks[0].dims)
    for m in masks:
        if not m.same_grid(masks[0]):
            raise VolumeError("all masks must share one grid")
        acc = np.maximum(acc, sobel_edges(m).data)
    return masks[0].with_data(acc, kind=VolumeKind.EDGE_SET)


def edge_map_union(masks: Iterable[Volume3], params: EdgeParams) -> Volume3:
    """
    Single-channel edge map of several structures.

    Equals the pointwise maximum of the per-structure edge maps, since
    exp(-lambda * d) is decreasing in d and the EDT of a union of edge sets is
    the minimum of the individual EDTs.
    """
    edges = union_edges(masks)
    dist = edt(edges)
    return edges.with_data(_distance_to_map(dist.data, params), kind=VolumeKind.EDGE_MAP)


def lambda_at(sched: LambdaSchedule, epoch: int) -> float:
    """
    Cosine-annealed lambda at an epoch.

    lambda(t) = lambda_end + (lambda_start - lambda_end) * (1 + cos(pi t / T)) / 2,
    evaluated as a convex combination so both endpoints are returned exactly.

    Raises:
        ConfigError: Epoch outside [0, total_epochs]
    """
    if not (0 <= epoch <= sched.total_epochs):
        raise ConfigError(f"epoch {epoch} outside [0, {sched.total_epochs}]")
    w = (1.0 + math.cos(math.pi * epoch / sched.total_epochs)) / 2.0
    lam = sched.lambda_start * w + sched.lambda_end * (1.0 - w)
    logger.trace(f"lambda_at epoch={epoch} → {lam}")
    return lam

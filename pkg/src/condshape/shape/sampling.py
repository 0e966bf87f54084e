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

from typing import Optional, Tuple, Union

import numpy as np
from loguru import logger

from condshape.errors import ConfigError, EmptySurfaceError
from condshape.metrics import surface_points
from condshape.phantoms.generator import occupancy, rasterize
from condshape.phantoms.models import PartRole, PhantomSpec
from condshape.shape.model import SamplingConfig
from condshape.volume import Volume3, VolumeKind


def stratum_counts(n: int, sampling: SamplingConfig) -> Tuple[int, int, int]:
    near = int(n * sampling.near_fraction)
    far = int(n * sampling.far_fraction)
    return near, far, n - near - far


def nearest_voxel_labels(mask: Volume3, pts: np.ndarray) -> np.ndarray:
    idx = np.rint(pts / mask.spacing).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(mask.dims) - 1)
    return mask.data[idx[:, 0], idx[:, 1], idx[:, 2]]


def sample_training_points(
    gt: Union[PhantomSpec, Volume3],
    n: int,
    seed: int,
    grid: Optional[Volume3] = None,
    sampling: Optional[SamplingConfig] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Labelled query points for the target cavity.

    Surface points of the rasterized cavity are jittered with an isotropic
    Gaussian (near and far strata); the remainder is uniform in the world box.
    Points are clipped to the box. Labels come from the analytic oracle when gt
    is a spec, else from the nearest voxel of the mask.

    Returns:
        (P x 3 world points, P labels in {0, 1})
    """
    if n < 1:
        raise ConfigError(f"need at least one training point, got n={n}")
    sampling = sampling or SamplingConfig()
    if isinstance(gt, PhantomSpec):
        if grid is None:
            raise ConfigError("sampling from a phantom spec needs the reference grid")
        mask = rasterize(gt, grid.dims, grid.spacing_mm, PartRole.TARGET_CAVITY.value)
    else:
        if gt.kind is not VolumeKind.MASK:
            raise ConfigError(f"sampling labels needs a mask volume, got {gt.kind.value}")
        mask = gt
    lo, hi = mask.world_bounds()
    rng = np.random.default_rng(seed)
    n_near, n_far, n_uniform = stratum_counts(n, sampling)

    try:
        surface = surface_points(mask)
    except EmptySurfaceError:
        logger.debug("empty cavity after augmentation; sampling uniformly")
        surface = None

    strata = []
    for count, sigma in ((n_near, sampling.near_sigma_mm), (n_far, sampling.far_sigma_mm)):
        if surface is None:
            strata.append(rng.uniform(lo, hi, size=(count, 3)))
        else:
            picks = surface[rng.integers(0, len(surface), size=count)]
            strata.append(picks + rng.normal(0.0, sigma, size=(count, 3)))
    strata.append(rng.uniform(lo, hi, size=(n_uniform, 3)))
    pts = np.clip(np.concatenate(strata, axis=0), lo, hi)

    if isinstance(gt, PhantomSpec):
        labels = occupancy(gt, pts, PartRole.TARGET_CAVITY.value).astype(np.float64)
    else:
        labels = nearest_voxel_labels(mask, pts)
    return pts, labels

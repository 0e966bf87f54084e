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
Synthetic two-domain phantoms.

Each phantom is a cavity ellipsoid (the segmentation target), a concentric
shell around it and a companion ellipsoid sitting at the cavity's base. The
oracle is analytic, so masks at any resolution and after any affine
augmentation are exact.
"""

from typing import Dict, List, Sequence

import numpy as np
from loguru import logger
from scipy import ndimage

from condshape.errors import ConfigError
from condshape.phantoms.models import (
    Domain,
    DomainConfig,
    PartRole,
    PhantomCase,
    PhantomPart,
    PhantomSpec,
)
from condshape.tools.seeds import derive_seed
from condshape.tools.workers import parallel_map
from condshape.volume import Volume3, VolumeKind

CONE_HALF_ANGLE_DEG = 45.0


def euler_rotation(degrees: Sequence[float]) -> np.ndarray:
    """Rotation Rz @ Ry @ Rx for angles (rx, ry, rz) in degrees"""
    rx, ry, rz = np.deg2rad(np.asarray(degrees, dtype=np.float64))
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def occupancy(spec: PhantomSpec, pts: np.ndarray, role: str) -> np.ndarray:
    """
    Vectorised oracle: boolean per point, True iff inside any part with the role.

    Boundary points (normalised radius exactly 1) count as inside.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    inside = np.zeros(pts.shape[0], dtype=bool)
    for part in spec.parts_with_role(role):
        # row vectors: (p - c) @ R == (R^T (p - c))^T
        local = (pts - np.asarray(part.center)) @ part.rotation_matrix
        q = np.sum((local / np.asarray(part.radii)) ** 2, axis=1)
        inside |= q <= 1.0
    return inside


def occupancy_oracle(spec: PhantomSpec, pt: Sequence[float], role: str) -> int:
    """1 iff the world point lies inside the union of parts with the given role"""
    return int(occupancy(spec, np.asarray([pt]), role)[0])


def _centers(dims: Sequence[int], spacing_mm: Sequence[float]) -> np.ndarray:
    axes = [np.arange(n, dtype=np.float64) * s for n, s in zip(dims, spacing_mm)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def rasterize(spec: PhantomSpec, dims: Sequence[int], spacing_mm: Sequence[float], role: str) -> Volume3:
    """Mask whose voxel values are the oracle at voxel centers"""
    dims = tuple(int(n) for n in dims)
    inside = occupancy(spec, _centers(dims, spacing_mm), role)
    return Volume3(data=inside.reshape(dims).astype(np.float64), spacing_mm=tuple(spacing_mm), kind=VolumeKind.MASK)


def rasterize_all(spec: PhantomSpec, dims: Sequence[int], spacing_mm: Sequence[float]) -> Dict[str, Volume3]:
    """Per-role masks for every PartRole"""
    return {role.value: rasterize(spec, dims, spacing_mm, role.value) for role in PartRole.all()}


def render_clean(spec: PhantomSpec, cfg: DomainConfig, dims: Sequence[int], spacing_mm: Sequence[float]) -> np.ndarray:
    """Piecewise-constant intensities: blood pools (cavity, companion) inside, the rest outside"""
    dims = tuple(int(n) for n in dims)
    pts = _centers(dims, spacing_mm)
    pools = occupancy(spec, pts, PartRole.TARGET_CAVITY) | occupancy(spec, pts, PartRole.COMPANION)
    values = np.where(pools, cfg.intensity_inside, cfg.intensity_outside).astype(np.float64)
    if cfg.intensity_shell is not None:
        wall = occupancy(spec, pts, PartRole.SHELL) & ~pools
        values[wall] = cfg.intensity_shell
    return values.reshape(dims)


def cone_mask(dims: Sequence[int], spacing_mm: Sequence[float]) -> np.ndarray:
    """
    Boolean acquisition cone: apex at the center of the top (max z) face, axis
    pointing down -z, half-angle 45 degrees.
    """
    dims = tuple(int(n) for n in dims)
    spacing = np.asarray(spacing_mm, dtype=np.float64)
    pts = _centers(dims, spacing_mm).reshape(dims + (3,))
    hi = (np.asarray(dims) - 0.5) * spacing
    lo = -0.5 * spacing
    apex = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, hi[2]])
    depth = apex[2] - pts[..., 2]
    radial = np.hypot(pts[..., 0] - apex[0], pts[..., 1] - apex[1])
    return (depth >= 0) & (radial <= depth * np.tan(np.deg2rad(CONE_HALF_ANGLE_DEG)))


def render_domain(
    spec: PhantomSpec,
    cfg: DomainConfig,
    dims: Sequence[int],
    spacing_mm: Sequence[float],
    seed: int,
) -> Volume3:
    """
    Intensity volume of a phantom in a domain.

    Source: piecewise-constant intensities only.
    Target: Gaussian blur (blur_sigma_mm), multiplicative speckle value*(1 + eta)
    with eta ~ N(0, speckle_sigma), then zeroing outside the cone when enabled.
    Deterministic per seed.
    """
    values = render_clean(spec, cfg, dims, spacing_mm)
    if cfg.domain == Domain.TARGET:
        rng = np.random.default_rng(seed)
        if cfg.blur_sigma_mm > 0:
            sigma = cfg.blur_sigma_mm / np.asarray(spacing_mm, dtype=np.float64)
            values = ndimage.gaussian_filter(values, sigma=sigma, mode="nearest")
        if cfg.speckle_sigma > 0:
            values = values * (1.0 + rng.normal(0.0, cfg.speckle_sigma, size=values.shape))
        if cfg.cone_enabled:
            values = np.where(cone_mask(dims, spacing_mm), values, 0.0)
    return Volume3(data=values, spacing_mm=tuple(spacing_mm), kind=VolumeKind.INTENSITY)


def random_spec(seed: int, dims: Sequence[int], spacing_mm: Sequence[float]) -> PhantomSpec:
    """
    Draw a phantom. With L the smallest grid extent (mm) and c the grid center:

    - cavity center: c + (0, 0, 0.08 L) + U(-0.05 L, 0.05 L) per axis
    - pose: Euler angles U(-25, 25) degrees per axis, shared by all parts
    - cavity radii: U(0.15, 0.2) L, U(0.15, 0.2) L, U(0.22, 0.27) L (long axis local z)
    - shell: cavity radii + wall U(0.05, 0.07) L, same center and pose
    - companion: radii (r, r, 0.9 r), r ~ U(0.12, 0.16) L, centered 0.6 r beyond the
      cavity's lower pole along the long axis
    """
    rng = np.random.default_rng(seed)
    spacing = np.asarray(spacing_mm, dtype=np.float64)
    extent = np.asarray(dims, dtype=np.float64) * spacing
    L = float(extent.min())
    center = (extent / 2.0 - spacing / 2.0) + np.array([0.0, 0.0, 0.08 * L]) + rng.uniform(-0.05 * L, 0.05 * L, 3)

    rot = euler_rotation(rng.uniform(-25.0, 25.0, 3))
    rot_t = tuple(tuple(row) for row in rot)

    cavity_r = np.array([rng.uniform(0.15, 0.2) * L, rng.uniform(0.15, 0.2) * L, rng.uniform(0.22, 0.27) * L])
    wall = rng.uniform(0.05, 0.07) * L
    r_comp = rng.uniform(0.12, 0.16) * L
    comp_center = center - rot @ np.array([0.0, 0.0, cavity_r[2] + 0.6 * r_comp])

    parts = [
        PhantomPart(center=tuple(center), radii=tuple(cavity_r), rotation=rot_t, role=PartRole.TARGET_CAVITY.value),
        PhantomPart(center=tuple(center), radii=tuple(cavity_r + wall), rotation=rot_t, role=PartRole.SHELL.value),
        PhantomPart(center=tuple(comp_center), radii=(r_comp, r_comp, 0.9 * r_comp), rotation=rot_t,
                    role=PartRole.COMPANION.value),
    ]
    return PhantomSpec(parts=parts, seed=int(seed))


def make_case(
    case_id: str,
    spec: PhantomSpec,
    domain_cfg: DomainConfig,
    dims: Sequence[int],
    spacing_mm: Sequence[float],
    render_seed: int,
) -> PhantomCase:
    intensity = render_domain(spec, domain_cfg, dims, spacing_mm, render_seed)
    return PhantomCase(
        case_id=case_id,
        domain=Domain(domain_cfg.domain),
        intensity=intensity,
        masks=rasterize_all(spec, dims, spacing_mm),
        spec=spec,
        meta={"render_seed": render_seed},
    )


def make_dataset(
    n_cases: int,
    dims: Sequence[int],
    spacing_mm: Sequence[float],
    domain_cfg: DomainConfig,
    seed: int,
    id_prefix: str = "case",
) -> List[PhantomCase]:
    """
    Generate n_cases phantoms rendered in one domain.

    Case i uses sub-seeds derive_seed(seed, "phantom", i) for the shape and
    derive_seed(seed, "render", i) for the degradation, so datasets are
    reproducible from (seed, n_cases) and prefixes of a larger dataset equal
    smaller ones.
    """
    if n_cases < 1:
        raise ConfigError(f"n_cases must be >= 1, got {n_cases}")
    dims = tuple(int(n) for n in dims)
    spacing_mm = tuple(float(s) for s in spacing_mm)
    logger.info(f"Generating {n_cases} {domain_cfg.domain.value} cases {dims} @ {spacing_mm} mm (seed={seed})")

    def build(i: int) -> PhantomCase:
        spec = random_spec(derive_seed(seed, "phantom", i), dims, spacing_mm)
        return make_case(f"{id_prefix}_{i:04d}", spec, domain_cfg, dims, spacing_mm, derive_seed(seed, "render", i))

    cases = parallel_map(build, range(n_cases))
    logger.info(f"  ✓ Generated {len(cases)} cases")
    return cases

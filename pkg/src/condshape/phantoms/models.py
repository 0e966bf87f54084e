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

"""Domain models for the synthetic phantom benchmark"""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from condshape.errors import ConfigError
from condshape.volume import Volume3

Vec3 = Tuple[float, float, float]
Mat3 = Tuple[Vec3, Vec3, Vec3]

IDENTITY: Mat3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class PartRole(str, Enum):
    TARGET_CAVITY = "target_cavity"  # left ventricle analog, the structure we segment
    SHELL = "shell"                  # myocardium analog, encloses the cavity
    COMPANION = "companion"          # atrium analog

    @classmethod
    def all(cls) -> List["PartRole"]:
        return [cls.TARGET_CAVITY, cls.SHELL, cls.COMPANION]


class Domain(str, Enum):
    SOURCE = "source"  # clean, CT-like
    TARGET = "target"  # degraded, ultrasound-like


@dataclass
class PhantomPart:
    """
    One ellipsoid of a phantom.

    A world point p is inside iff ||R^T (p - center) / radii|| <= 1.

    Attributes:
        center: Ellipsoid center in world mm
        radii: Semi-axes in mm, along the columns of rotation
        rotation: Orthonormal 3x3 matrix, row-major
        role: PartRole value
    """
    center: Vec3
    radii: Vec3
    rotation: Mat3 = IDENTITY
    role: str = PartRole.TARGET_CAVITY.value

    def __post_init__(self):
        self.center = tuple(float(c) for c in self.center)
        self.radii = tuple(float(r) for r in self.radii)
        self.rotation = tuple(tuple(float(v) for v in row) for row in self.rotation)
        self.role = PartRole(self.role).value

        if len(self.center) != 3 or len(self.radii) != 3:
            raise ConfigError("part center and radii need 3 components")
        if not all(r > 0 for r in self.radii):
            raise ConfigError(f"part radii must be > 0, got {self.radii}")
        rot = self.rotation_matrix
        if rot.shape != (3, 3) or not np.allclose(rot @ rot.T, np.eye(3), rtol=0, atol=1e-6):
            raise ConfigError("part rotation must be orthonormal to 1e-6")

    @property
    def rotation_matrix(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=np.float64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": list(self.center),
            "radii": list(self.radii),
            "rotation": [list(row) for row in self.rotation],
            "role": self.role,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PhantomPart":
        return cls(**data)


@dataclass
class PhantomSpec:
    """
    Analytic multi-part phantom with an exact occupancy oracle.

    Attributes:
        parts: Ellipsoids; exactly one has role target_cavity
        seed: Seed the phantom was drawn with (bookkeeping only)
    """
    parts: List[PhantomPart]
    seed: int = 0

    def __post_init__(self):
        self.parts = [p if isinstance(p, PhantomPart) else PhantomPart.from_dict(p) for p in self.parts]
        n_cavity = sum(p.role == PartRole.TARGET_CAVITY.value for p in self.parts)
        if n_cavity != 1:
            raise ConfigError(f"a phantom needs exactly one target_cavity part, got {n_cavity}")

    def parts_with_role(self, role: str) -> List[PhantomPart]:
        role = PartRole(role).value
        return [p for p in self.parts if p.role == role]

    @property
    def cavity(self) -> PhantomPart:
        return self.parts_with_role(PartRole.TARGET_CAVITY)[0]

    def to_dict(self) -> Dict[str, Any]:
        return {"seed": self.seed, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PhantomSpec":
        return cls(parts=[PhantomPart.from_dict(p) for p in data["parts"]], seed=int(data.get("seed", 0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class DomainConfig(BaseModel):
    """
    How a phantom is rendered into intensities.

    Source renderings are piecewise constant; target renderings add blur,
    multiplicative speckle and an optional acquisition cone.
    """
    domain: Domain = Domain.SOURCE
    speckle_sigma: float = Field(default=0.0, ge=0.0)
    blur_sigma_mm: float = Field(default=0.0, ge=0.0)
    cone_enabled: bool = False
    intensity_inside: float = 1.0
    intensity_outside: float = 0.0
    # wall (shell minus cavity) intensity; None renders the wall as outside
    intensity_shell: Optional[float] = None

    @model_validator(mode="after")
    def check_source_is_clean(self):
        if self.domain == Domain.SOURCE and (self.speckle_sigma != 0.0 or self.cone_enabled):
            raise ValueError("source domain requires speckle_sigma = 0 and cone_enabled = false")
        return self

    @classmethod
    def source(cls, **kwargs) -> "DomainConfig":
        return cls(domain=Domain.SOURCE, **kwargs)

    @classmethod
    def target(cls, **kwargs) -> "DomainConfig":
        defaults = dict(speckle_sigma=0.2, blur_sigma_mm=1.0, cone_enabled=True)
        defaults.update(kwargs)
        return cls(domain=Domain.TARGET, **defaults)


@dataclass
class PhantomCase:
    """
    One generated case: intensities, per-role GT masks and the generating spec.
    """
    case_id: str
    domain: Domain
    intensity: Volume3
    masks: Dict[str, Volume3]
    spec: PhantomSpec
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def target_mask(self) -> Volume3:
        return self.masks[PartRole.TARGET_CAVITY.value]

    def structure_masks(self) -> List[Volume3]:
        """Masks of every structure, in PartRole order"""
        return [self.masks[r.value] for r in PartRole.all() if r.value in self.masks]

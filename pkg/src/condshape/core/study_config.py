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
Study configuration: one JSON file describing datasets, networks, training and
the data-efficiency sweep. Every section is optional and falls back to the
desk-scale defaults.
"""

import json
from pathlib import Path
from typing import List, Optional, Tuple, Union

from loguru import logger
from pydantic import BaseModel, Field, ValidationError, field_validator

from condshape import config
from condshape.errors import ConfigError
from condshape.nets.training import BaselineTrainConfig, EdgeTrainConfig
from condshape.phantoms.models import DomainConfig
from condshape.shape.model import ShapeModelConfig


class DataConfig(BaseModel):
    """
    Attributes:
        root: Dataset directory written by gen-data (defaults to DATA_DIR)
        n_target_pool: Target cases available for training and validation
        n_test: Fixed target test set shared by every sweep cell
    """
    dims: Tuple[int, int, int] = (32, 32, 32)
    spacing_mm: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    n_source: int = Field(default=200, ge=1)
    n_target_pool: int = Field(default=200, ge=1)
    n_test: int = Field(default=20, ge=1)
    root: Optional[str] = None

    @field_validator("dims")
    @classmethod
    def check_dims(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("dims must be positive")
        return v

    @field_validator("spacing_mm")
    @classmethod
    def check_spacing(cls, v):
        if any(s <= 0 for s in v):
            raise ValueError("spacing_mm must be positive")
        return v

    def resolved_root(self) -> Path:
        return Path(self.root or config.DATA_DIR)


class SweepConfig(BaseModel):
    fractions: List[float] = Field(default_factory=lambda: [0.02, 0.10, 0.50, 1.00])
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    valid_fraction: float = Field(default=0.05, gt=0.0, lt=1.0)
    # score an empty prediction with the grid diagonal instead of failing the cell
    penalize_empty: bool = True
    parallel_cells: bool = False

    @field_validator("fractions")
    @classmethod
    def check_fractions(cls, v):
        if not v:
            raise ValueError("at least one fraction is required")
        if any(not 0.0 < f <= 1.0 for f in v):
            raise ValueError("fractions must lie in (0, 1]")
        if any(a >= b for a, b in zip(v, v[1:])):
            raise ValueError("fractions must be sorted strictly ascending")
        return v

    @field_validator("seeds")
    @classmethod
    def check_seeds(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        return v


class StudyConfig(BaseModel):
    seed: int = 0
    output_dir: Optional[str] = None
    # reuse a trained shape model instead of training one
    shape_model_path: Optional[str] = None
    data: DataConfig = Field(default_factory=DataConfig)
    source_domain: DomainConfig = Field(default_factory=DomainConfig.source)
    target_domain: DomainConfig = Field(default_factory=DomainConfig.target)
    edge: EdgeTrainConfig = Field(default_factory=EdgeTrainConfig)
    baseline: BaselineTrainConfig = Field(default_factory=BaselineTrainConfig)
    shape: ShapeModelConfig = Field(default_factory=ShapeModelConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    @field_validator("source_domain")
    @classmethod
    def check_source(cls, v):
        if v.domain.value != "source":
            raise ValueError("source_domain must render the source domain")
        return v

    @field_validator("target_domain")
    @classmethod
    def check_target(cls, v):
        if v.domain.value != "target":
            raise ValueError("target_domain must render the target domain")
        return v

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or config.OUTPUT_DIR)


def _field_name(err: ValidationError) -> str:
    first = err.errors()[0]
    loc = ".".join(str(p) for p in first.get("loc", ())) or "<root>"
    return f"{loc}: {first.get('msg', 'invalid value')}"


def parse_study_config(data: dict) -> StudyConfig:
    """
    Raises:
        ConfigError: Names the first offending field
    """
    try:
        return StudyConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid study config field {_field_name(e)}") from e


def load_study_config(path: Optional[Union[str, Path]] = None) -> StudyConfig:
    """Read and validate a study JSON file; no path gives the defaults"""
    if path is None:
        return StudyConfig()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"study config not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"study config {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"study config {path} must hold a JSON object")
    study = parse_study_config(data)
    logger.debug(f"Loaded study config from {path}")
    return study


def apply_overrides(
    study: StudyConfig,
    seed: Optional[int] = None,
    lam: Optional[float] = None,
    fraction: Optional[float] = None,
    out: Optional[str] = None,
) -> StudyConfig:
    """
    CLI overrides on top of the parsed study: --seed pins the root seed and the
    sweep to that seed, --fraction runs a single fraction, --lambda fixes the
    edge sharpness, --out redirects outputs. The result is re-validated.
    """
    data = study.model_dump(mode="json")
    if seed is not None:
        data["seed"] = seed
        data["sweep"]["seeds"] = [seed]
    if fraction is not None:
        data["sweep"]["fractions"] = [fraction]
    if lam is not None:
        data["shape"]["lambda_fixed"] = lam
    if out is not None:
        data["output_dir"] = out
    return parse_study_config(data)

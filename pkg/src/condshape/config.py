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

import os
from pathlib import Path
from typing import List, Optional, Union

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = Path(__file__).parent.parent.parent
CONFIG_NAME = "condshape.conf"


def default_config_paths() -> List[Path]:
    """Searched in order when no settings file is given"""
    return [PROJECT_ROOT / "conf" / CONFIG_NAME, Path.cwd() / "conf" / CONFIG_NAME]


class AppConfig(BaseSettings):
    """
    Process-wide settings.

    Configuration priority (highest to lowest):
    1. Environment variables
    2. Settings file (KEY=VALUE lines, conf/condshape.conf)
    3. Default values defined here

    Experiment parameters (datasets, networks, sweep) live in the study JSON
    file instead, see condshape.core.study_config.
    """

    OUTPUT_DIR: str = Field(default_factory=lambda: str(PROJECT_ROOT / 'output'))
    DATA_DIR: str = Field(default_factory=lambda: str(PROJECT_ROOT / 'data'))

    LOG_DIR: str = Field(default_factory=lambda: str(PROJECT_ROOT / 'logs'))
    LOG_LEVEL: str = 'INFO'

    # Worker threads for per-case work, 0 = one per CPU
    CONDSHAPE_THREADS: int = Field(default=0, ge=0)

    # Distance transform backend: 'scipy' or 'envelope'
    EDT_BACKEND: str = 'scipy'

    # Points decoded per chunk during dense inference
    INFER_CHUNK_POINTS: int = Field(default=32768, ge=1)

    model_config = SettingsConfigDict(
        env_file=None,
        env_file_encoding='utf-8',
        case_sensitive=True,
        extra='ignore',
    )

    @field_validator('EDT_BACKEND')
    @classmethod
    def check_backend(cls, v):
        if v not in ('scipy', 'envelope'):
            raise ValueError(f"EDT_BACKEND must be 'scipy' or 'envelope', got {v!r}")
        return v

    @field_validator('LOG_LEVEL')
    @classmethod
    def upper_level(cls, v):
        return v.strip().upper()

    @property
    def worker_count(self) -> int:
        """Effective worker count for thread pools"""
        return self.CONDSHAPE_THREADS or (os.cpu_count() or 1)

    @classmethod
    def load_from_file(cls, config_path: Optional[Union[str, Path]] = None) -> 'AppConfig':
        """
        Settings from a KEY=VALUE file, overridden by the environment.

        Args:
            config_path: Settings file. If None, the first existing default path is
                used; a missing file leaves the defaults.
        """
        if config_path is None:
            config_path = next((p for p in default_config_paths() if p.exists()), None)
        return cls(_env_file=Path(config_path) if config_path else None)


config = AppConfig.load_from_file()


def reload_config(config_path: Optional[str] = None):
    """Re-read the settings, e.g. after the CLI received --app-config"""
    global config
    config = AppConfig.load_from_file(config_path)


def __getattr__(name: str):
    """Module attributes fall through to the settings (config.LOG_DIR etc.)"""
    if hasattr(config, name):
        return getattr(config, name)
    raise AttributeError(f"module '{__name__}' has no attribute '{name}'")

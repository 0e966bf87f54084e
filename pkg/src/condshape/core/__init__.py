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
Core orchestration: segmenter protocol, study configuration and the sweep pipeline
"""

from condshape.core.protocols import Segmenter
from condshape.core.study_config import (
    DataConfig,
    StudyConfig,
    SweepConfig,
    apply_overrides,
    load_study_config,
    parse_study_config,
)
from condshape.core.pipeline import (
    SweepCell,
    SweepPipeline,
    generate_datasets,
    load_study_data,
    nested_split,
    split_sizes,
)

__all__ = [
    'Segmenter',
    'DataConfig',
    'StudyConfig',
    'SweepConfig',
    'apply_overrides',
    'load_study_config',
    'parse_study_config',
    'SweepCell',
    'SweepPipeline',
    'generate_datasets',
    'load_study_data',
    'nested_split',
    'split_sizes',
]

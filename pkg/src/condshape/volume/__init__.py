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
Volume core: grids, world coordinates, trilinear sampling, resampling and VOLF I/O
"""

from condshape.volume.volume import (
    Volume3,
    VolumeKind,
    WorldPoint,
    binarize,
    extract_patch,
    pad_to_multiple,
    resample,
    sample_indices,
    sample_points,
    trilinear_sample,
)
from condshape.volume.io import read_volume, write_volume, volume_to_bytes, volume_from_bytes, VOLF_MAGIC

__all__ = [
    'Volume3',
    'VolumeKind',
    'WorldPoint',
    'binarize',
    'extract_patch',
    'pad_to_multiple',
    'resample',
    'sample_indices',
    'sample_points',
    'trilinear_sample',
    'read_volume',
    'write_volume',
    'volume_to_bytes',
    'volume_from_bytes',
    'VOLF_MAGIC',
]

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

"""Synthetic two-domain phantom benchmark"""

from condshape.phantoms.models import (
    Domain,
    DomainConfig,
    PartRole,
    PhantomCase,
    PhantomPart,
    PhantomSpec,
)
from condshape.phantoms.generator import (
    euler_rotation,
    make_case,
    make_dataset,
    occupancy,
    occupancy_oracle,
    random_spec,
    rasterize,
    rasterize_all,
    render_domain,
)
from condshape.phantoms.persister import DatasetPersister, load_dataset, read_manifest

__all__ = [
    'Domain',
    'DomainConfig',
    'PartRole',
    'PhantomCase',
    'PhantomPart',
    'PhantomSpec',
    'euler_rotation',
    'make_case',
    'make_dataset',
    'occupancy',
    'occupancy_oracle',
    'random_spec',
    'rasterize',
    'rasterize_all',
    'render_domain',
    'DatasetPersister',
    'load_dataset',
    'read_manifest',
]

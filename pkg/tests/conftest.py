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

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from condshape.phantoms import DomainConfig, make_dataset  # noqa: E402
from condshape.volume import Volume3, VolumeKind  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run training-run checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training-run check, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sphere_mask(dims=(12, 12, 12), center=(5.5, 5.5, 5.5), radius=3.5, spacing=(1.0, 1.0, 1.0)) -> Volume3:
    axes = [np.arange(n) * s for n, s in zip(dims, spacing)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    d = np.sqrt((gx - center[0]) ** 2 + (gy - center[1]) ** 2 + (gz - center[2]) ** 2)
    return Volume3((d <= radius).astype(float), spacing_mm=spacing, kind=VolumeKind.MASK)


@pytest.fixture
def sphere():
    return sphere_mask()


@pytest.fixture(scope="session")
def tiny_source():
    return make_dataset(3, (16, 16, 16), (1.0, 1.0, 1.0), DomainConfig.source(), seed=7,
                        id_prefix="source")


@pytest.fixture(scope="session")
def tiny_target():
    return make_dataset(4, (16, 16, 16), (1.0, 1.0, 1.0), DomainConfig.target(intensity_shell=0.5), seed=8,
                        id_prefix="target")

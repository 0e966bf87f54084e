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
Core protocols for the sweep pipeline.

The pipeline compares segmentation methods without knowing how they work: a
method is anything that turns a target intensity volume into a binary mask on
the same grid. Protocols keep the coupling structural, so DcsmSegmenter and
BaselineSegmenter need no common base class.
"""

from typing import List, Protocol, runtime_checkable

from condshape.volume import Volume3


@runtime_checkable
class Segmenter(Protocol):
    """
    A trained segmentation method.

    Minimal Contract:
    - name: Method label used in reports ('dcsm', 'baseline')
    - seconds: Wall time of every segment() call so far
    - segment: Intensity volume in, mask volume out

    Example implementations:
    - DcsmSegmenter: edge detector followed by the frozen shape model
    - BaselineSegmenter: image-to-mask UNet
    """

    name: str
    seconds: List[float]

    def segment(self, intensity: Volume3) -> Volume3:
        """
        Segment the target structure.

        Args:
            intensity: Target-domain intensity volume

        Returns:
            Volume3: Binary mask on the intensity's grid
        """
        ...

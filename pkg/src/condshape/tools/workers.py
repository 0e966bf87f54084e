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

"""Thread pool helper for embarrassingly parallel per-case work"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from loguru import logger

from condshape import config

A = TypeVar('A')
R = TypeVar('R')


def parallel_map(fn: Callable[[A], R], items: Iterable[A], max_workers: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item, results in input order.

    Args:
        fn: Pure function of one item
        items: Inputs
        max_workers: Thread cap; defaults to CONDSHAPE_THREADS (0 = one per CPU)
    """
    items = list(items)
    workers = min(max_workers or config.worker_count, max(len(items), 1))
    if workers <= 1:
        return [fn(it) for it in items]
    logger.debug(f"parallel_map: {len(items)} items on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))

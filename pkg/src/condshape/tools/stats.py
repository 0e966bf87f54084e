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
Run statistics for one CLI command:
- Wall time per pipeline stage
- Epochs run per trainer
- Checkpoint hashes
- Per-volume inference times

Usage:
    stats.reset_stats("sweep")
    with stats.timed_stage("cells"):
        ...
    stats.finalize_stats()
    stats.print_summary()
"""

import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from loguru import logger

RULE = "=" * 80


def _section(title: str, rows: Iterable[Tuple[str, Any]], total: Optional[str] = None) -> List[str]:
    rows = list(rows)
    if not rows:
        return []
    out = [f"{title}:"] + [f"  ├─ {k}: {v}" for k, v in rows]
    if total is not None:
        out.append(f"  └─ {total}")
    return out + [""]


@dataclass
class ExecutionStats:
    command: str = ""
    args: Dict[str, Any] = field(default_factory=dict)
    started: datetime = field(default_factory=datetime.now)
    finished: Optional[datetime] = None

    stage_seconds: Dict[str, float] = field(default_factory=dict)
    epochs: Dict[str, int] = field(default_factory=dict)
    checkpoints: Dict[str, str] = field(default_factory=dict)  # name -> sha256
    inference_seconds: List[float] = field(default_factory=list)  # one per volume
    errors: List[str] = field(default_factory=list)

    def duration(self) -> float:
        return ((self.finished or datetime.now()) - self.started).total_seconds()

    def mean_inference_seconds(self) -> float:
        n = len(self.inference_seconds)
        return sum(self.inference_seconds) / n if n else 0.0

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "started": self.started.isoformat(),
            "finished": self.finished.isoformat() if self.finished else None,
            "duration_seconds": self.duration(),
            "stages": dict(self.stage_seconds),
            "epochs": dict(self.epochs),
            "checkpoints": dict(self.checkpoints),
            "inference": {"volumes": len(self.inference_seconds), "mean_seconds": self.mean_inference_seconds()},
            "errors": list(self.errors),
        }

    def get_summary_lines(self) -> List[str]:
        lines = [RULE, "EXECUTION SUMMARY", RULE, f"Duration: {self.duration():.2f} seconds"]
        if self.command:
            lines.append(f"Command: {self.command}")
        lines += _section("Arguments", sorted(self.args.items()))
        lines += _section("STAGES", [(s, f"{sec:.2f} s") for s, sec in self.stage_seconds.items()],
                          total=f"Total: {sum(self.stage_seconds.values()):.2f} s")
        lines += _section("TRAINING", [(t, f"{n} epochs") for t, n in sorted(self.epochs.items())])
        lines += _section("CHECKPOINTS", sorted(self.checkpoints.items()))
        if self.inference_seconds:
            lines += _section("INFERENCE", [("Volumes", len(self.inference_seconds))],
                              total=f"Mean time per volume: {self.mean_inference_seconds():.3f} s")
        lines += _section("ERRORS", [(str(i), e) for i, e in enumerate(self.errors, start=1)])
        lines.append(RULE)
        return lines


class StatsCollector:
    """Process-wide singleton; updates are locked because sweep cells may run on threads"""

    _instance: Optional['StatsCollector'] = None
    _stats: Optional[ExecutionStats] = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    @classmethod
    def reset(cls, command: str = ""):
        cls._stats = ExecutionStats(command=command)
        logger.debug(f"Stats reset for command: {command or '<none>'}")

    @classmethod
    def get_stats(cls) -> ExecutionStats:
        if cls._stats is None:
            cls.reset()
        return cls._stats

    @classmethod
    def update(cls, fn):
        """Apply fn to the current stats under the lock"""
        with cls._lock:
            fn(cls.get_stats())


# Convenience functions

def reset_stats(command: str = ""):
    StatsCollector.reset(command)


def set_args(args: Dict[str, Any]):
    StatsCollector.get_stats().args = dict(args)


def record_stage(stage: str, seconds: float):
    def add(s: ExecutionStats):
        s.stage_seconds[stage] = s.stage_seconds.get(stage, 0.0) + seconds
    StatsCollector.update(add)
    logger.debug(f"Stage {stage}: {seconds:.2f} s")


@contextmanager
def timed_stage(stage: str):
    """Time a block and record it as a stage"""
    start = time.perf_counter()
    try:
        yield
    finally:
        record_stage(stage, time.perf_counter() - start)


def record_epochs(trainer: str, n: int):
    def add(s: ExecutionStats):
        s.epochs[trainer] = s.epochs.get(trainer, 0) + n
    StatsCollector.update(add)


def record_checkpoint(name: str, digest: str):
    StatsCollector.update(lambda s: s.checkpoints.__setitem__(name, digest))
    logger.debug(f"Checkpoint {name}: {digest[:12]}")


def record_inference(seconds: float):
    StatsCollector.update(lambda s: s.inference_seconds.append(seconds))


def record_error(error: str):
    StatsCollector.update(lambda s: s.errors.append(error))


def get_stats() -> ExecutionStats:
    return StatsCollector.get_stats()


def finalize_stats() -> ExecutionStats:
    stats = StatsCollector.get_stats()
    stats.finished = datetime.now()
    return stats


def print_summary():
    for line in StatsCollector.get_stats().get_summary_lines():
        logger.info(line)


def save_stats(filepath: Path):
    """Write the summary block to a text file"""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    filepath.write_text("\n".join(StatsCollector.get_stats().get_summary_lines()), encoding="utf-8")
    logger.info(f"Statistics saved to: {filepath}")

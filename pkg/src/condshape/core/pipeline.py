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
Data-efficiency sweep pipeline.

The pipeline compares the conditioned shape model against the image-to-mask
baseline as the amount of target-domain training data grows:
- The shape model is trained once, on source data only, and then frozen
- For every (fraction, seed) cell the edge detector and the baseline are
  trained on a nested target subsample
- Both methods segment the same fixed test set and are scored per case

Usage:
    pipeline = SweepPipeline(study, source_cases=src, target_pool=pool, test_cases=test)
    report = pipeline.run()
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from condshape.core.protocols import Segmenter
from condshape.core.study_config import StudyConfig
from condshape.errors import ConfigError, DatasetError
from condshape.metrics import CaseMetrics, MetricsReport, evaluate_cases
from condshape.nets.training import train_baseline, train_edge_detector
from condshape.nets.unet import save_unet
from condshape.phantoms import DatasetPersister, PhantomCase, load_dataset, make_dataset
from condshape.shape import (
    BaselineSegmenter,
    DcsmSegmenter,
    ShapeModel,
    load_shape_model,
    save_shape_model,
    train_shape_model,
)
from condshape.tensorgrad import file_hash
from condshape.tools import stats
from condshape.tools.seeds import derive_seed, rng_for
from condshape.tools.workers import parallel_map

SOURCE_DIR, TARGET_DIR, TEST_DIR = "source", "target", "test"
SHAPE_MODEL_FILE = "shape_model.ckpt"
REPORT_FILE = "sweep_report.json"
TIMING_FILE = "sweep_timing.json"
METHODS = ("dcsm", "baseline")


@dataclass(frozen=True)
class SweepCell:
    fraction: float
    seed: int
    n_train: int
    n_valid: int

    @property
    def key(self) -> str:
        return f"f{self.fraction:g}_s{self.seed}"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def split_sizes(n_pool: int, fraction: float, valid_fraction: float) -> Tuple[int, int]:
    """
    (n_train, n_valid) of a fraction of the target pool; validation takes
    ceil(valid_fraction * subsample), at least one case.

    Raises:
        ConfigError: The fraction leaves no training case
    """
    n_sub = min(n_pool, max(1, int(round(fraction * n_pool))))
    n_valid = max(1, math.ceil(valid_fraction * n_sub))
    n_train = n_sub - n_valid
    if n_train < 1:
        raise ConfigError(f"fraction {fraction:g} of {n_pool} target cases yields zero training cases")
    return n_train, n_valid


def nested_split(
    pool: Sequence[PhantomCase], cell: SweepCell
) -> Tuple[List[PhantomCase], List[PhantomCase]]:
    """
    Shuffle the pool once per seed and take a prefix, so a smaller fraction's
    subsample is contained in every larger one.
    """
    order = rng_for(cell.seed, "subsample").permutation(len(pool))
    sub = [pool[i] for i in order[:cell.n_train + cell.n_valid]]
    return sub[cell.n_valid:], sub[:cell.n_valid]


def generate_datasets(study: StudyConfig, root: Optional[Path] = None) -> Path:
    """Write source/, target/ (train+valid pool) and test/ datasets under root"""
    root = Path(root or study.data.resolved_root())
    d = study.data
    plan = [
        (SOURCE_DIR, d.n_source, study.source_domain),
        (TARGET_DIR, d.n_target_pool, study.target_domain),
        (TEST_DIR, d.n_test, study.target_domain),
    ]
    for name, n, domain in plan:
        cases = make_dataset(n, d.dims, d.spacing_mm, domain, derive_seed(study.seed, "data", name), id_prefix=name)
        DatasetPersister(root / name).save(cases, config={"data": d.model_dump(mode="json"),
                                                          "domain": domain.model_dump(mode="json"),
                                                          "seed": study.seed})
    return root


def load_study_data(root: Path) -> Tuple[List[PhantomCase], List[PhantomCase], List[PhantomCase]]:
    """
    Raises:
        DatasetError: A dataset directory is missing or malformed
    """
    return load_dataset(root / SOURCE_DIR), load_dataset(root / TARGET_DIR), load_dataset(root / TEST_DIR)


class SweepPipeline:
    """
    Pipeline for the data-efficiency study.

    Attributes:
        study: Validated study configuration
        out_dir: Report, shape model and per-cell outputs
        source_cases / target_pool / test_cases: Datasets; loaded from the
            study's data root when not injected
    """

    def __init__(
        self,
        study: StudyConfig,
        out_dir: Optional[Path] = None,
        source_cases: Optional[List[PhantomCase]] = None,
        target_pool: Optional[List[PhantomCase]] = None,
        test_cases: Optional[List[PhantomCase]] = None,
    ):
        self.study = study
        self.out_dir = Path(out_dir or study.resolved_output_dir())
        self.source_cases = source_cases
        self.target_pool = target_pool
        self.test_cases = test_cases
        self.shape_model: Optional[ShapeModel] = None
        self.shape_hash: Optional[str] = None

        logger.info("Initialized SweepPipeline")

    # ============ Plan ============

    def plan(self, n_pool: Optional[int] = None) -> List[SweepCell]:
        """Cells in run order: seeds outer, fractions ascending inner"""
        n_pool = n_pool or (len(self.target_pool) if self.target_pool is not None else self.study.data.n_target_pool)
        cells = []
        for seed in self.study.sweep.seeds:
            for fraction in self.study.sweep.fractions:
                n_train, n_valid = split_sizes(n_pool, fraction, self.study.sweep.valid_fraction)
                cells.append(SweepCell(fraction, seed, n_train, n_valid))
        return cells

    def dry_run(self) -> Dict[str, Any]:
        cells = self.plan()
        shape = (f"load {self.study.shape_model_path}" if self.study.shape_model_path
                 else f"train once on {self.study.data.n_source} source cases")
        plan = {
            "dry_run": True,
            "shape_model": shape,
            "test_cases": len(self.test_cases) if self.test_cases is not None else self.study.data.n_test,
            "cells": [dict(c.to_dict(), methods=list(METHODS)) for c in cells],
        }
        logger.info(f"Sweep plan: {len(cells)} cells x {len(METHODS)} methods, shape model: {shape}")
        for c in cells:
            logger.info(f"  ├─ fraction={c.fraction:g} seed={c.seed} train={c.n_train} valid={c.n_valid}")
        return plan

    # ============ Core Pipeline Methods ============

    def run(self) -> Dict[str, Any]:
        logger.info(f"Starting sweep | fractions={self.study.sweep.fractions} seeds={self.study.sweep.seeds}")

        logger.info("[1/5] Loading datasets...")
        with stats.timed_stage("load_data"):
            self._load_data()
        logger.info(f"  ✓ source={len(self.source_cases)} target pool={len(self.target_pool)} "
                    f"test={len(self.test_cases)}")

        cells = self.plan()

        logger.info("[2/5] Preparing the frozen shape model...")
        with stats.timed_stage("shape_model"):
            self._prepare_shape_model()
        logger.info(f"  ✓ Shape model {self.shape_hash[:12]}")

        logger.info(f"[3/5] Running {len(cells)} cells...")
        with stats.timed_stage("cells"):
            if self.study.sweep.parallel_cells:
                results = parallel_map(self._run_cell, cells)
            else:
                results = [self._run_cell(c) for c in cells]
        blocks = [block for cell_blocks, _ in results for block in cell_blocks]
        timings = [t for _, cell_timings in results for t in cell_timings]
        logger.info(f"  ✓ {len(blocks)} metric blocks")

        logger.info("[4/5] Assembling report...")
        report = {
            "shape_model_hash": self.shape_hash,
            "cells": blocks,
            "table": self.build_table(blocks),
        }

        logger.info("[5/5] Saving report...")
        path = self.out_dir / REPORT_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
        # timings vary between runs; the report file is bit-reproducible
        timing_path = self.out_dir / TIMING_FILE
        timing_path.write_text(json.dumps({"cells": timings}, indent=2, sort_keys=True), encoding="utf-8")
        logger.info(f"  ✓ Saved to {path} (timings: {timing_path.name})")

        logger.info("=" * 60)
        logger.info(f"✅ Sweep completed - {len(cells)} cells")
        logger.info("=" * 60)
        return report

    def _load_data(self) -> None:
        if self.source_cases is None or self.target_pool is None or self.test_cases is None:
            src, pool, test = load_study_data(self.study.data.resolved_root())
            self.source_cases = self.source_cases if self.source_cases is not None else src
            self.target_pool = self.target_pool if self.target_pool is not None else pool
            self.test_cases = self.test_cases if self.test_cases is not None else test
        if not self.test_cases:
            raise DatasetError("sweep needs a nonempty test set")
        overlap = {c.case_id for c in self.test_cases} & {c.case_id for c in self.target_pool}
        if overlap:
            raise DatasetError(f"test set overlaps the training pool: {sorted(overlap)[:5]}")

    def _prepare_shape_model(self) -> None:
        # trained once here and never inside the cell loop
        if self.study.shape_model_path:
            path = Path(self.study.shape_model_path)
            self.shape_model = load_shape_model(path)
            self.shape_hash = file_hash(path)
        else:
            result = train_shape_model(self.source_cases, self.study.shape, self.study.seed,
                                       log_path=self.out_dir / "shape_train.jsonl")
            self.shape_model = result.model
            self.shape_hash = save_shape_model(self.shape_model, self.out_dir / SHAPE_MODEL_FILE)
        self.shape_model.eval()
        stats.record_checkpoint("shape_model", self.shape_hash)

    def _run_cell(self, cell: SweepCell) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
        """Metric blocks of both methods, plus their wall-clock timings kept apart from the report"""
        logger.info(f"  Cell {cell.key}: train={cell.n_train} valid={cell.n_valid}")
        cell_dir = self.out_dir / "cells" / cell.key
        train, valid = nested_split(self.target_pool, cell)
        seed = derive_seed(self.study.seed, "cell", cell.seed, f"{cell.fraction:g}")

        edge = train_edge_detector(train, valid, self.study.edge, seed, log_path=cell_dir / "edge_train.jsonl")
        edge_hash = save_unet(edge.model, cell_dir / "edge_detector.ckpt", extra={"lambdas": edge.lambdas})
        base = train_baseline(train, valid, self.study.baseline, seed, log_path=cell_dir / "baseline_train.jsonl")
        base_hash = save_unet(base.model, cell_dir / "baseline.ckpt", extra={"chosen_epoch": base.chosen_epoch})
        stats.record_checkpoint(f"{cell.key}/edge_detector", edge_hash)
        stats.record_checkpoint(f"{cell.key}/baseline", base_hash)

        segmenters: List[Tuple[Segmenter, str]] = [
            (DcsmSegmenter(edge.model, self.shape_model), edge_hash),
            (BaselineSegmenter(base.model), base_hash),
        ]
        blocks, timings = [], []
        for seg, ckpt in segmenters:
            report = self.evaluate(seg)
            report.save(cell_dir / f"metrics_{seg.name}.json")
            blocks.append({
                "method": seg.name,
                "fraction": cell.fraction,
                "seed": cell.seed,
                "n_train": cell.n_train,
                "n_valid": cell.n_valid,
                "metrics": report.to_dict(),
                "checkpoint": ckpt,
                "shape_model_hash": self.shape_hash,
            })
            timings.append({
                "method": seg.name,
                "fraction": cell.fraction,
                "seed": cell.seed,
                "time_per_volume_s": float(np.mean(seg.seconds)) if seg.seconds else 0.0,
            })
            logger.info(f"  ✓ {cell.key} {seg.name}: {report.table_row()}")
        return blocks, timings

    def evaluate(self, segmenter: Segmenter) -> MetricsReport:
        penalty = None
        preds, gts = {}, {}
        for case in self.test_cases:
            preds[case.case_id] = segmenter.segment(case.intensity)
            gts[case.case_id] = case.target_mask
        if self.study.sweep.penalize_empty:
            # grid diagonal: the largest distance two points in the volume can have
            penalty = float(np.linalg.norm(self.test_cases[0].intensity.extent_mm))
        return evaluate_cases(preds, gts, empty_penalty_mm=penalty)

    @staticmethod
    def build_table(blocks: List[Dict[str, Any]]) -> List[Dict[str, str]]:
        """One row per (method, fraction), cases pooled over seeds"""
        rows = []
        fractions = sorted({b["fraction"] for b in blocks})
        for method in METHODS:
            for fraction in fractions:
                chosen = [b for b in blocks if b["method"] == method and b["fraction"] == fraction]
                if not chosen:
                    continue
                pooled = MetricsReport([
                    CaseMetrics(c["id"], c["dice"], c["asd_mm"], c["hd_mm"])
                    for b in chosen for c in b["metrics"]["cases"]
                ])
                first = chosen[0]
                row = {
                    "Method": "DCSM" if method == "dcsm" else "Baseline",
                    "Data (train, valid)": f"{fraction * 100:g}% ({first['n_train']},{first['n_valid']})",
                }
                row.update(pooled.table_row())
                rows.append(row)
        return rows

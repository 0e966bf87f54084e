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

import json

import pytest

from condshape.core.pipeline import (
    REPORT_FILE,
    TIMING_FILE,
    SweepCell,
    SweepPipeline,
    generate_datasets,
    load_study_data,
    nested_split,
    split_sizes,
)
from condshape.core.study_config import parse_study_config
from condshape.errors import ConfigError, DatasetError
from condshape.phantoms import DomainConfig, make_dataset
from condshape.shape import build_shape_model, save_shape_model
from condshape.tensorgrad import file_hash

TINY_UNET = {"down_channels": [2, 4], "width": 1.0, "patch_size": 8}


def tiny_study(tmp_path, **sweep):
    return parse_study_config({
        "seed": 3,
        "output_dir": str(tmp_path / "out"),
        "data": {"dims": [16, 16, 16], "n_source": 2, "n_target_pool": 4, "n_test": 1,
                 "root": str(tmp_path / "data")},
        "edge": {"epochs": 1, "batch_size": 2, "unet": TINY_UNET},
        "baseline": {"epochs": 1, "batch_size": 2, "unet": dict(TINY_UNET, role="baseline")},
        "shape": {"channels": [2, 3], "decoder_widths": [8], "points_per_sample": 64, "epochs": 1},
        "sweep": dict({"fractions": [0.5, 1.0], "seeds": [0]}, **sweep),
    })


@pytest.fixture(scope="module")
def test_cases():
    return make_dataset(1, (16, 16, 16), (1.0, 1.0, 1.0), DomainConfig.target(intensity_shell=0.5), seed=21,
                        id_prefix="test")


class TestSplits:
    @pytest.mark.parametrize(
        "n_pool, fraction, expected",
        [(200, 0.02, (3, 1)), (200, 0.1, (19, 1)), (200, 0.5, (95, 5)), (200, 1.0, (190, 10)), (4, 0.5, (1, 1))],
    )
    def test_split_sizes(self, n_pool, fraction, expected):
        assert split_sizes(n_pool, fraction, 0.05) == expected

    def test_fraction_without_training_case(self):
        with pytest.raises(ConfigError):
            split_sizes(20, 0.01, 0.05)

    def test_subsamples_are_nested(self, tiny_target):
        small = SweepCell(0.5, 1, *split_sizes(4, 0.5, 0.05))
        large = SweepCell(1.0, 1, *split_sizes(4, 1.0, 0.05))
        s_train, s_valid = nested_split(tiny_target, small)
        l_train, l_valid = nested_split(tiny_target, large)
        assert (len(s_train), len(s_valid)) == (1, 1)
        assert (len(l_train), len(l_valid)) == (3, 1)
        small_ids = {c.case_id for c in s_train + s_valid}
        assert small_ids <= {c.case_id for c in l_train + l_valid}
        assert not {c.case_id for c in l_train} & {c.case_id for c in l_valid}

    def test_split_is_seeded(self, tiny_target):
        cell = SweepCell(1.0, 2, 3, 1)
        assert [c.case_id for c in nested_split(tiny_target, cell)[0]] == \
            [c.case_id for c in nested_split(tiny_target, cell)[0]]

    def test_cell_key(self):
        assert SweepCell(0.1, 2, 19, 1).key == "f0.1_s2"


class TestDatasets:
    def test_generate_and_load(self, tmp_path):
        study = tiny_study(tmp_path)
        root = generate_datasets(study)
        source, pool, test = load_study_data(root)
        assert (len(source), len(pool), len(test)) == (2, 4, 1)
        assert {c.domain.value for c in source} == {"source"}
        assert {c.domain.value for c in pool + test} == {"target"}
        assert not {c.case_id for c in pool} & {c.case_id for c in test}

    def test_missing_data(self, tmp_path):
        with pytest.raises(DatasetError):
            load_study_data(tmp_path / "nothing")


class TestSweep:
    def test_dry_run_plans_cells(self, tmp_path):
        study = tiny_study(tmp_path, seeds=[0, 1])
        plan = SweepPipeline(study).dry_run()
        assert plan["dry_run"] is True
        assert [(c["fraction"], c["seed"]) for c in plan["cells"]] == [(0.5, 0), (1.0, 0), (0.5, 1), (1.0, 1)]
        assert plan["cells"][0]["methods"] == ["dcsm", "baseline"]
        assert plan["shape_model"].startswith("train once")
        assert not (tmp_path / "out").exists()

    def test_overlapping_test_set(self, tmp_path, tiny_source, tiny_target):
        pipeline = SweepPipeline(tiny_study(tmp_path), source_cases=tiny_source, target_pool=tiny_target,
                                 test_cases=tiny_target[:1])
        with pytest.raises(DatasetError, match="overlaps"):
            pipeline.run()

    def test_tiny_sweep_report(self, tmp_path, tiny_source, tiny_target, test_cases):
        study = tiny_study(tmp_path)
        pipeline = SweepPipeline(study, source_cases=list(tiny_source[:2]), target_pool=list(tiny_target),
                                 test_cases=list(test_cases))
        report = pipeline.run()

        saved = json.loads((tmp_path / "out" / REPORT_FILE).read_text())
        assert saved == json.loads(json.dumps(report))
        assert len(report["cells"]) == 2 * 1 * 2
        assert {b["shape_model_hash"] for b in report["cells"]} == {report["shape_model_hash"]}
        assert report["shape_model_hash"] == file_hash(tmp_path / "out" / "shape_model.ckpt")
        for block in report["cells"]:
            assert len(block["metrics"]["cases"]) == 1
            assert 0.0 <= block["metrics"]["cases"][0]["dice"] <= 1.0
        assert [r["Method"] for r in report["table"]] == ["DCSM", "DCSM", "Baseline", "Baseline"]
        assert report["table"][0]["Data (train, valid)"] == "50% (1,1)"
        shape_log = (tmp_path / "out" / "shape_train.jsonl").read_text().splitlines()
        assert len(shape_log) == 1

    def test_reuses_saved_shape_model(self, tmp_path, tiny_target, test_cases):
        shape_path = tmp_path / "frozen.ckpt"
        study = tiny_study(tmp_path, fractions=[1.0])
        save_shape_model(build_shape_model(study.shape, seed=0), shape_path)
        study = study.model_copy(update={"shape_model_path": str(shape_path)})
        pipeline = SweepPipeline(study, source_cases=[], target_pool=list(tiny_target), test_cases=list(test_cases))
        assert pipeline.dry_run()["shape_model"] == f"load {shape_path}"
        report = pipeline.run()
        assert report["shape_model_hash"] == file_hash(shape_path)
        assert not (tmp_path / "out" / "shape_train.jsonl").exists()

    def test_report_is_reproducible_and_timings_kept_apart(self, tmp_path, tiny_target, test_cases):
        shape_path = tmp_path / "frozen.ckpt"
        study = tiny_study(tmp_path, fractions=[1.0])
        save_shape_model(build_shape_model(study.shape, seed=0), shape_path)
        study = study.model_copy(update={"shape_model_path": str(shape_path)})
        for name in ("a", "b"):
            SweepPipeline(study, out_dir=tmp_path / name, source_cases=[], target_pool=list(tiny_target),
                          test_cases=list(test_cases)).run()

        first = (tmp_path / "a" / REPORT_FILE).read_bytes()
        assert first == (tmp_path / "b" / REPORT_FILE).read_bytes()
        assert all("time_per_volume_s" not in block for block in json.loads(first)["cells"])
        timings = json.loads((tmp_path / "a" / TIMING_FILE).read_text())["cells"]
        assert [(t["method"], t["fraction"], t["seed"]) for t in timings] == [("dcsm", 1.0, 0), ("baseline", 1.0, 0)]
        assert all(t["time_per_volume_s"] >= 0.0 for t in timings)

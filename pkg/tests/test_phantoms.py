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

import numpy as np
import pytest
from pydantic import ValidationError

from condshape.errors import ConfigError, DatasetError
from condshape.phantoms import (
    DatasetPersister,
    Domain,
    DomainConfig,
    PartRole,
    PhantomPart,
    PhantomSpec,
    euler_rotation,
    make_dataset,
    occupancy_oracle,
    random_spec,
    rasterize,
    rasterize_all,
    render_domain,
    load_dataset,
    read_manifest,
)
from condshape.phantoms.generator import cone_mask, render_clean

DIMS = (16, 16, 16)
SPACING = (1.0, 1.0, 1.0)


class TestSpec:
    def test_euler_rotation_is_orthonormal(self):
        rot = euler_rotation((10.0, -20.0, 30.0))
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(rot) == pytest.approx(1.0)

    def test_spec_needs_one_cavity(self):
        shell = PhantomPart(center=(0, 0, 0), radii=(1, 1, 1), role=PartRole.SHELL.value)
        with pytest.raises(ConfigError):
            PhantomSpec(parts=[shell])

    def test_part_rejects_non_positive_radius(self):
        with pytest.raises(ConfigError):
            PhantomPart(center=(0, 0, 0), radii=(1, 0, 1))

    def test_oracle_boundary_counts_as_inside(self):
        spec = PhantomSpec(parts=[PhantomPart(center=(0, 0, 0), radii=(2, 1, 1))])
        assert occupancy_oracle(spec, (2.0, 0.0, 0.0), PartRole.TARGET_CAVITY.value) == 1
        assert occupancy_oracle(spec, (2.01, 0.0, 0.0), PartRole.TARGET_CAVITY.value) == 0

    def test_random_spec_is_deterministic(self):
        assert random_spec(5, DIMS, SPACING).to_dict() == random_spec(5, DIMS, SPACING).to_dict()
        assert random_spec(5, DIMS, SPACING).to_dict() != random_spec(6, DIMS, SPACING).to_dict()

    def test_json_round_trip(self):
        spec = random_spec(3, DIMS, SPACING)
        back = PhantomSpec.from_dict(json.loads(spec.to_json()))
        assert back.to_dict() == spec.to_dict()


class TestRasterize:
    def test_voxels_equal_oracle_at_centers(self, rng):
        spec = random_spec(11, DIMS, SPACING)
        mask = rasterize(spec, DIMS, SPACING, PartRole.TARGET_CAVITY.value)
        for idx in rng.integers(0, 16, size=(200, 3)):
            center = idx * np.asarray(SPACING)
            assert mask.data[tuple(idx)] == occupancy_oracle(spec, center, PartRole.TARGET_CAVITY.value)

    def test_cavity_nonempty_and_inside_shell(self):
        masks = rasterize_all(random_spec(2, DIMS, SPACING), DIMS, SPACING)
        cavity = masks[PartRole.TARGET_CAVITY.value].data
        shell = masks[PartRole.SHELL.value].data
        assert cavity.sum() > 0
        assert np.all(shell[cavity > 0] == 1.0)

    def test_all_roles_present(self):
        masks = rasterize_all(random_spec(2, DIMS, SPACING), DIMS, SPACING)
        assert set(masks) == {r.value for r in PartRole.all()}


class TestRender:
    def test_source_is_piecewise_constant(self):
        spec = random_spec(4, DIMS, SPACING)
        vol = render_domain(spec, DomainConfig.source(intensity_shell=0.5), DIMS, SPACING, seed=0)
        assert set(np.unique(vol.data)) <= {0.0, 0.5, 1.0}

    def test_target_is_zero_outside_cone(self):
        spec = random_spec(4, DIMS, SPACING)
        vol = render_domain(spec, DomainConfig.target(), DIMS, SPACING, seed=0)
        outside = ~cone_mask(DIMS, SPACING)
        assert outside.any()
        np.testing.assert_array_equal(vol.data[outside], 0.0)

    def test_target_render_is_seeded(self):
        spec = random_spec(4, DIMS, SPACING)
        cfg = DomainConfig.target()
        a = render_domain(spec, cfg, DIMS, SPACING, seed=1)
        b = render_domain(spec, cfg, DIMS, SPACING, seed=1)
        c = render_domain(spec, cfg, DIMS, SPACING, seed=2)
        np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_cone_apex_at_top_center(self):
        cone = cone_mask(DIMS, SPACING)
        assert cone[8, 8, 10]
        assert not cone[0, 0, 15]

    def test_default_source_has_two_levels(self):
        vol = render_domain(random_spec(4, DIMS, SPACING), DomainConfig.source(), DIMS, SPACING, seed=0)
        assert len(np.unique(vol.data)) == 2

    def test_undegraded_target_equals_source(self):
        spec = random_spec(5, DIMS, SPACING)
        plain = DomainConfig.target(speckle_sigma=0.0, blur_sigma_mm=0.0, cone_enabled=False)
        target = render_domain(spec, plain, DIMS, SPACING, seed=3)
        source = render_domain(spec, DomainConfig.source(), DIMS, SPACING, seed=3)
        np.testing.assert_array_equal(target.data, source.data)

    def test_speckle_variance(self):
        dims = (64, 64, 64)
        spec = random_spec(6, dims, SPACING)
        cfg = DomainConfig.target(speckle_sigma=0.2, blur_sigma_mm=0.0, cone_enabled=False)
        clean = render_clean(spec, cfg, dims, SPACING)
        noisy = render_domain(spec, cfg, dims, SPACING, seed=11).data
        interior = clean != 0
        assert interior.sum() > 1000
        ratio = noisy[interior] / clean[interior] - 1.0
        assert np.var(ratio) == pytest.approx(0.04, rel=0.2)

    def test_source_rejects_speckle(self):
        with pytest.raises(ValidationError):
            DomainConfig.source(speckle_sigma=0.1)


class TestDataset:
    def test_ids_and_domain(self, tiny_source, tiny_target):
        assert [c.case_id for c in tiny_source] == ["source_0000", "source_0001", "source_0002"]
        assert all(c.domain is Domain.SOURCE for c in tiny_source)
        assert all(c.domain is Domain.TARGET for c in tiny_target)

    def test_prefix_of_larger_dataset(self, tiny_source):
        smaller = make_dataset(2, DIMS, SPACING, DomainConfig.source(), seed=7, id_prefix="source")
        for a, b in zip(smaller, tiny_source):
            assert a.case_id == b.case_id
            np.testing.assert_array_equal(a.intensity.data, b.intensity.data)
            np.testing.assert_array_equal(a.target_mask.data, b.target_mask.data)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            make_dataset(0, DIMS, SPACING, DomainConfig.source(), seed=0)

    def test_persist_round_trip(self, tmp_path, tiny_target):
        DatasetPersister(tmp_path / "target").save(tiny_target, {"seed": 8})
        assert read_manifest(tmp_path / "target")["config"] == {"seed": 8}
        loaded = load_dataset(tmp_path / "target")
        assert [c.case_id for c in loaded] == [c.case_id for c in tiny_target]
        for a, b in zip(loaded, tiny_target):
            assert a.domain is Domain.TARGET
            assert a.spec.to_dict() == b.spec.to_dict()
            np.testing.assert_array_equal(a.target_mask.data, b.target_mask.data)
            np.testing.assert_allclose(a.intensity.data, b.intensity.data.astype(np.float32), rtol=0, atol=0)

    def test_mixed_domains_rejected(self, tmp_path, tiny_source, tiny_target):
        with pytest.raises(DatasetError):
            DatasetPersister(tmp_path).save(tiny_source[:1] + tiny_target[:1])

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)

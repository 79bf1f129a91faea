import json

import numpy as np
import pytest

from permflow.errors import InvariantError, LevelError, ParameterError, ShapeError
from permflow.fields import GridField2D, crop_reconstruction
from permflow.lifting import LiftingConfig
from permflow.quadtree import (CoefficientQuadtree, count_active_bases,
                               forward_transform_2d, inverse_transform_2d,
                               threshold_tree, tree_from_json, tree_to_json)

CFG = LiftingConfig(half_width=2)


def random_tree(seed=0, size=32, levels=4):
    rng = np.random.default_rng(seed)
    return forward_transform_2d(rng.normal(size=(size, size)), levels, CFG), rng


class TestTransform2D:
    def test_constant_field_scaling_only(self):
        tree = forward_transform_2d(np.full((16, 16), 3.0), 3, CFG)
        assert np.allclose(tree.scaling, 3.0)
        for d in tree.details:
            assert np.max(np.abs(d)) < 1e-12

    def test_roundtrip_random(self):
        tree, rng = random_tree(seed=11)
        field = rng.normal(size=(32, 32))
        tree = forward_transform_2d(field, 4, CFG)
        rec = inverse_transform_2d(tree, CFG, domain=(0, 1, 0, 1))
        assert np.max(np.abs(rec.values - field)) < 1e-12 * np.max(np.abs(field))

    def test_level_shapes_quadtree(self):
        tree, _ = random_tree()
        assert tree.scaling.shape == (2, 2)
        for j, d in enumerate(tree.details):
            assert d.shape == (3, 2 ** (j + 1), 2 ** (j + 1))
            if j > 0:
                assert d[0].size == 4 * tree.details[j - 1][0].size

    def test_too_many_levels(self):
        with pytest.raises(LevelError):
            forward_transform_2d(np.zeros((16, 16)), 4, CFG)

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            forward_transform_2d(np.zeros((16, 8)), 2, CFG)

    def test_linearity(self):
        rng = np.random.default_rng(9)
        f, g = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
        tf = forward_transform_2d(f, 3, CFG)
        tg = forward_transform_2d(g, 3, CFG)
        th = forward_transform_2d(1.5 * f + 0.25 * g, 3, CFG)
        assert np.allclose(th.scaling, 1.5 * tf.scaling + 0.25 * tg.scaling)
        for dh, df, dg in zip(th.details, tf.details, tg.details):
            assert np.allclose(dh, 1.5 * df + 0.25 * dg)

    def test_orientation_bands_selective(self):
        # a field varying along y only excites the band that carries
        # wavelets in y (scaling in x)
        n = 16
        y = np.arange(n) % 2
        field = np.tile(y, (n, 1)).astype(float)
        tree = forward_transform_2d(field, 1, CFG)
        horizontal, vertical, diagonal = tree.details[-1]
        assert np.max(np.abs(horizontal)) > 0.1
        assert np.max(np.abs(vertical)) < 1e-12
        assert np.max(np.abs(diagonal)) < 1e-12

    def test_zero_padding_refines_by_interpolation(self):
        tree, _ = random_tree(seed=3, size=8, levels=2)
        rec = inverse_transform_2d(tree, CFG, target_level=5)
        assert rec.values.shape == (64, 64)
        # refinement with zero details reproduces the stored-depth field
        # on the shared (subsampled) lattice
        coarse_rec = inverse_transform_2d(tree, CFG)
        assert np.allclose(rec.values[::8, ::8], coarse_rec.values)

    def test_target_below_depth_rejected(self):
        tree, _ = random_tree()
        with pytest.raises(LevelError):
            inverse_transform_2d(tree, CFG, target_level=2)


class TestThreshold:
    def test_huge_epsilon_only_scaling(self):
        tree, _ = random_tree()
        out = threshold_tree(tree, 1e9, 1.0)
        assert count_active_bases(out) == 4
        for d in out.details:
            assert np.max(np.abs(d)) == 0.0

    def test_tiny_epsilon_keeps_all_nonzero(self):
        tree, _ = random_tree()
        out = threshold_tree(tree, 1e-300, 1.0)
        for d, m in zip(tree.details, out.mask):
            assert np.array_equal(m, d != 0.0) or m.all()

    def test_bruteforce_oracle(self):
        tree, _ = random_tree(seed=21)
        norm = max(np.max(np.abs(d)) for d in tree.details)
        out = threshold_tree(tree, 0.02, norm)
        cut = 0.02 * norm
        for j in range(tree.max_level):
            keep = np.abs(tree.details[j]) >= cut
            assert np.array_equal(out.mask[j], keep)
            assert np.allclose(out.details[j], np.where(keep, tree.details[j], 0.0))
        out.validate_support(zero_tree=False)

    def test_kept_values_unchanged(self):
        tree, _ = random_tree(seed=5)
        out = threshold_tree(tree, 0.1, 1.0)
        for j in range(tree.max_level):
            kept = out.mask[j]
            assert np.array_equal(out.details[j][kept], tree.details[j][kept])

    def test_nonpositive_epsilon_rejected(self):
        tree, _ = random_tree()
        with pytest.raises(ParameterError):
            threshold_tree(tree, 0.0, 1.0)
        with pytest.raises(ParameterError):
            threshold_tree(tree, 0.02, -1.0)


class TestCounts:
    def test_scale0_is_four(self):
        tree, _ = random_tree()
        assert count_active_bases(tree, 0) == 4

    def test_dense_tree_totals(self):
        tree = forward_transform_2d(np.random.default_rng(1).normal(size=(64, 64)), 5, CFG)
        for s in range(6):
            assert count_active_bases(tree, s) == 2 ** (2 * (s + 1)) if s else 4

    def test_all_masked_details(self):
        tree, _ = random_tree()
        out = threshold_tree(tree, 1e12, 1.0)
        assert count_active_bases(out) == tree.scaling.size

    def test_scale_out_of_range(self):
        tree, _ = random_tree()
        with pytest.raises(LevelError):
            count_active_bases(tree, 9)


class TestInvariants:
    def test_mask_value_consistency_checked(self):
        tree, _ = random_tree()
        bad = tree.copy()
        bad.mask[1][0, 0, 0] = False  # value stays non-zero
        with pytest.raises(InvariantError):
            bad.validate_support(zero_tree=False)

    def test_zero_tree_closure_checked(self):
        tree, _ = random_tree()
        t = threshold_tree(tree, 1e12, 1.0)
        t.mask[1][0, 1, 1] = True
        t.details[1][0, 1, 1] = 0.5
        with pytest.raises(InvariantError):
            t.validate_support(zero_tree=True)

    def test_bad_level_shape_rejected(self):
        with pytest.raises(ShapeError):
            CoefficientQuadtree(
                scaling=np.zeros((2, 2)),
                details=[np.zeros((3, 4, 4))],
                mask=[np.zeros((3, 4, 4), dtype=bool)],
            )


class TestSerialization:
    def test_json_roundtrip(self):
        tree, _ = random_tree(seed=8)
        tree = threshold_tree(tree, 0.05, 1.0)
        payload = json.loads(json.dumps(tree_to_json(tree, CFG)))
        assert payload["lifting"] == {"half_width": 2, "boundary": "periodic"}
        back = tree_from_json(payload)
        assert np.array_equal(back.scaling, tree.scaling)
        for a, b in zip(back.details, tree.details):
            assert np.array_equal(a, b)
        for a, b in zip(back.mask, tree.mask):
            assert np.array_equal(a, b)

    def test_layout_keys(self):
        tree, _ = random_tree(seed=2, size=8, levels=2)
        doc = tree_to_json(tree)
        assert set(doc) == {"max_level", "scaling", "details", "mask"}
        assert set(doc["details"]["0"]) == {"horizontal", "vertical", "diagonal"}


class TestCrop:
    def test_constant(self):
        fld = GridField2D(np.full((64, 64), 1.5), (0, 2, 0, 2), endpoint=False)
        out = crop_reconstruction(fld)
        assert out.values.shape == (32, 32)
        assert out.domain == (0.0, 1.0, 0.0, 1.0)
        assert np.all(out.values == 1.5)

    def test_index_identity(self):
        rng = np.random.default_rng(4)
        fld = GridField2D(rng.normal(size=(64, 64)), (0, 2, 0, 2), endpoint=False)
        out = crop_reconstruction(fld)
        assert np.array_equal(out.values, fld.values[:32, :32])

    def test_linear_field_analytic(self):
        # reconstruct the linear ramp from its transform over the doubled
        # domain, crop, compare with analytic samples on the unit square
        xs = np.arange(64) / 32.0
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        ramp = 2 * (gx + gy - 1)
        tree = forward_transform_2d(ramp, 5, CFG)
        rec = inverse_transform_2d(tree, CFG)
        out = crop_reconstruction(rec)
        sub_x = gx[:32, :32]
        sub_y = gy[:32, :32]
        assert np.max(np.abs(out.values - 2 * (sub_x + sub_y - 1))) < 1e-10

    def test_wrong_shape_rejected(self):
        with pytest.raises(ShapeError):
            crop_reconstruction(
                GridField2D(np.zeros((33, 33)), (0, 2, 0, 2), endpoint=True)
            )

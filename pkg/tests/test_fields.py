import numpy as np
import pytest

from permflow.errors import ShapeError
from permflow.fields import GridField2D, crop_reconstruction


class TestGridField:
    def test_dyadic_validation_periodic(self):
        GridField2D(np.zeros((8, 8)))
        with pytest.raises(ShapeError):
            GridField2D(np.zeros((10, 8)))

    def test_dyadic_validation_endpoint(self):
        GridField2D(np.zeros((33, 33)), endpoint=True)
        with pytest.raises(ShapeError):
            GridField2D(np.zeros((32, 32)), endpoint=True)

    def test_coords_periodic(self):
        fld = GridField2D(np.zeros((4, 4)), (0, 2, 0, 2))
        assert np.allclose(fld.x_coords(), [0, 0.5, 1.0, 1.5])

    def test_coords_endpoint(self):
        fld = GridField2D(np.zeros((5, 5)), (0, 1, 0, 1), endpoint=True)
        assert np.allclose(fld.x_coords(), [0, 0.25, 0.5, 0.75, 1.0])

    def test_bilinear_exact_at_nodes(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(size=(9, 9))
        fld = GridField2D(vals, (0, 1, 0, 1), endpoint=True)
        gx, gy = np.meshgrid(fld.x_coords(), fld.y_coords(), indexing="ij")
        assert np.allclose(fld.sample_bilinear(gx, gy), vals)

    def test_bilinear_reproduces_bilinear_function(self):
        xs = np.linspace(0, 1, 17)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        fld = GridField2D(1 + 2 * gx - 3 * gy + 0.5 * gx * gy, (0, 1, 0, 1), endpoint=True)
        xq = np.array([0.13, 0.77, 0.5])
        yq = np.array([0.9, 0.01, 0.5])
        want = 1 + 2 * xq - 3 * yq + 0.5 * xq * yq
        assert np.allclose(fld.sample_bilinear(xq, yq), want)

    def test_bilinear_clamps_outside(self):
        fld = GridField2D(np.arange(16, dtype=float).reshape(4, 4), (0, 1, 0, 1))
        inside = fld.sample_bilinear(0.75, 0.75)
        assert fld.sample_bilinear(5.0, 5.0) == fld.values[-1, -1]
        assert np.isfinite(inside)

    def test_csv_roundtrip(self):
        rng = np.random.default_rng(1)
        fld = GridField2D(rng.normal(size=(8, 8)), (0, 2, 0, 2), endpoint=False)
        back = GridField2D.from_csv(fld.to_csv())
        assert np.array_equal(back.values, fld.values)
        assert back.domain == fld.domain
        assert back.endpoint == fld.endpoint

    def test_csv_header_required(self):
        with pytest.raises(ShapeError):
            GridField2D.from_csv("1,2\n3,4\n")

    def test_json_roundtrip(self):
        fld = GridField2D(np.eye(4), (0, 1, 0, 1))
        back = GridField2D.from_json(fld.to_json())
        assert np.array_equal(back.values, fld.values)


class TestCropShape:
    def test_halves_domain(self):
        fld = GridField2D(np.zeros((16, 16)), (0, 2, 0, 2))
        out = crop_reconstruction(fld)
        assert out.domain == (0, 1, 0, 1)
        assert out.shape == (8, 8)

    def test_rejects_endpoint_grid(self):
        with pytest.raises(ShapeError):
            crop_reconstruction(GridField2D(np.zeros((17, 17)), (0, 2, 0, 2), endpoint=True))

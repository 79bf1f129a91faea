import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from permflow.errors import InvalidStencilError, ParameterError, ShapeError
from permflow.lifting import (LiftingConfig, forward_transform_1d,
                              inverse_transform_1d, predict_weights)


class TestPredictWeights:
    def test_linear_midpoint(self):
        assert np.allclose(predict_weights([0, 1], 0.5), [0.5, 0.5])

    def test_cubic_midpoint(self):
        # cubic Lagrange basis evaluated at 1/2; cross-checked with the
        # polynomial-fit oracle below
        w = predict_weights([-1, 0, 1, 2], 0.5)
        assert np.allclose(w, [-1 / 16, 9 / 16, 9 / 16, -1 / 16])

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_partition_of_unity(self, n):
        offsets = np.arange(-n + 1, n + 1)
        assert abs(predict_weights(offsets, 0.5).sum() - 1.0) < 1e-12

    def test_polynomial_fit_oracle(self):
        # weights must equal evaluating the interpolating polynomial:
        # fit an exact-degree polynomial through arbitrary samples and
        # compare against the weighted sum
        rng = np.random.default_rng(0)
        offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
        samples = rng.normal(size=offsets.size)
        poly = np.polynomial.Polynomial.fit(offsets, samples, deg=offsets.size - 1)
        w = predict_weights(offsets, 0.5)
        assert abs(w @ samples - poly(0.5)) < 1e-10

    def test_duplicate_offsets_rejected(self):
        with pytest.raises(InvalidStencilError):
            predict_weights([0, 0, 1, 2], 0.5)

    def test_constant_reproduction(self):
        for n in (1, 2, 3):
            w = predict_weights(np.arange(-n + 1, n + 1), 0.5)
            assert abs(w @ np.full(2 * n, 7.3) - 7.3) < 1e-12


class TestConfig:
    def test_half_width_validated(self):
        with pytest.raises(ParameterError):
            LiftingConfig(half_width=0)

    def test_boundary_validated(self):
        with pytest.raises(ParameterError):
            LiftingConfig(boundary="clamp")

    def test_update_table_length(self):
        with pytest.raises(ParameterError):
            LiftingConfig(half_width=2, update_table=(0.5, 0.5))


class TestForwardInverse1D:
    def test_constant_signal_zero_details(self):
        cfg = LiftingConfig(half_width=2)
        coarse, details = forward_transform_1d(np.full(16, 4.2), cfg)
        assert np.max(np.abs(details)) == 0.0
        assert np.allclose(coarse, 4.2)

    def test_cubic_annihilation_interior(self):
        # order-3 prediction reproduces cubics; one-sided stencils keep
        # the order at the boundary, so details vanish everywhere
        cfg = LiftingConfig(half_width=2, boundary="reflect")
        t = np.linspace(0.0, 1.0, 33)
        signal = 5 * t**3 - t**2 + 0.5 * t - 2
        _, details = forward_transform_1d(signal, cfg)
        assert np.max(np.abs(details)) < 1e-12

    def test_cubic_annihilation_periodic_interior(self):
        cfg = LiftingConfig(half_width=2, boundary="periodic")
        t = np.arange(32, dtype=float)
        signal = (t - 15.0) ** 3
        _, details = forward_transform_1d(signal, cfg)
        # wrap-around stencils near the ends see the jump; interior must vanish
        assert np.max(np.abs(details[3:-3])) < 1e-9 * np.max(np.abs(signal))

    @pytest.mark.parametrize("boundary,length", [("periodic", 16), ("reflect", 17)])
    @pytest.mark.parametrize("half_width", [1, 2, 3])
    def test_roundtrip(self, boundary, length, half_width):
        cfg = LiftingConfig(half_width=half_width, boundary=boundary)
        rng = np.random.default_rng(42)
        signal = rng.normal(size=length)
        coarse, details = forward_transform_1d(signal, cfg)
        back = inverse_transform_1d(coarse, details, cfg)
        assert np.max(np.abs(back - signal)) < 1e-12 * max(1, np.max(np.abs(signal)))

    def test_zero_details_constant_coarse(self):
        cfg = LiftingConfig()
        signal = inverse_transform_1d(np.full(8, 2.0), np.zeros(8), cfg)
        assert np.allclose(signal, 2.0)

    def test_odd_length_rejected_periodic(self):
        with pytest.raises(ShapeError):
            forward_transform_1d(np.zeros(15), LiftingConfig())

    def test_even_length_rejected_reflect(self):
        with pytest.raises(ShapeError):
            forward_transform_1d(np.zeros(16), LiftingConfig(boundary="reflect"))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            inverse_transform_1d(np.zeros(8), np.zeros(4), LiftingConfig())

    def test_synthesis_wavelet_zero_mean(self):
        # a single unit detail synthesizes one wavelet; the update stage
        # makes its sample mean vanish
        for half_width in (1, 2, 3):
            cfg = LiftingConfig(half_width=half_width)
            details = np.zeros(16)
            details[5] = 1.0
            wavelet = inverse_transform_1d(np.zeros(16), details, cfg)
            assert abs(wavelet.mean()) < 1e-12

    def test_synthesis_wavelet_column_extraction(self):
        # the wavelet equals the corresponding column of the full
        # synthesis matrix assembled from unit responses
        cfg = LiftingConfig(half_width=2)
        n = 8
        columns = []
        for k in range(n):
            d = np.zeros(n)
            d[k] = 1.0
            columns.append(inverse_transform_1d(np.zeros(n), d, cfg))
        synth = np.column_stack(columns)
        rng = np.random.default_rng(1)
        d = rng.normal(size=n)
        assert np.allclose(inverse_transform_1d(np.zeros(n), d, cfg), synth @ d)

    def test_linearity(self):
        cfg = LiftingConfig(half_width=2)
        rng = np.random.default_rng(3)
        f, g = rng.normal(size=16), rng.normal(size=16)
        cf, df = forward_transform_1d(f, cfg)
        cg, dg = forward_transform_1d(g, cfg)
        c2, d2 = forward_transform_1d(2.5 * f - 1.5 * g, cfg)
        assert np.allclose(c2, 2.5 * cf - 1.5 * cg)
        assert np.allclose(d2, 2.5 * df - 1.5 * dg)

    def test_mean_preserved_periodic(self):
        cfg = LiftingConfig(half_width=3)
        rng = np.random.default_rng(4)
        signal = rng.normal(size=64)
        coarse, _ = forward_transform_1d(signal, cfg)
        assert abs(coarse.mean() - signal.mean()) < 1e-12

    def test_explicit_update_table_still_invertible(self):
        cfg = LiftingConfig(half_width=1, update_table=(0.3, 0.1))
        rng = np.random.default_rng(5)
        signal = rng.normal(size=16)
        coarse, details = forward_transform_1d(signal, cfg)
        assert np.allclose(inverse_transform_1d(coarse, details, cfg), signal)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    half_width=st.integers(1, 3),
    log_len=st.integers(3, 6),
    boundary=st.sampled_from(["periodic", "reflect"]),
)
def test_roundtrip_property(seed, half_width, log_len, boundary):
    length = 2**log_len + (1 if boundary == "reflect" else 0)
    cfg = LiftingConfig(half_width=half_width, boundary=boundary)
    signal = np.random.default_rng(seed).normal(size=length)
    coarse, details = forward_transform_1d(signal, cfg)
    back = inverse_transform_1d(coarse, details, cfg)
    assert np.max(np.abs(back - signal)) < 1e-12 * max(1.0, np.max(np.abs(signal)))

"""Error metric suite: values, display conventions, region restriction."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagematte import metrics
from stagematte.filters import GRAD_SIGMA, GRAD_TRUNCATE
from stagematte.raster import AlphaMask


def mask(values):
    return AlphaMask(np.asarray(values, dtype=np.float64))


M_2X2 = mask([[0.0, 0.0], [1.0, 1.0]])
G_2X2 = mask([[0.0, 0.5], [1.0, 0.5]])


class TestMse:
    def test_equal_masks_give_zero(self):
        m = mask(np.random.default_rng(0).random((5, 5)))
        assert metrics.mse(m, m) == 0.0

    def test_opposite_constants_give_one(self):
        assert metrics.mse(mask(np.ones((3, 3))), mask(np.zeros((3, 3)))) == 1.0

    def test_2x2_hand_case(self):
        assert metrics.mse(M_2X2, G_2X2) == pytest.approx(0.125, abs=0)

    def test_empty_region_rejected(self):
        with pytest.raises(ValueError):
            metrics.mse(M_2X2, G_2X2, region=np.zeros((2, 2), dtype=bool))


class TestSad:
    def test_equal_masks_give_zero(self):
        m = mask(np.random.default_rng(1).random((5, 5)))
        assert metrics.sad(m, m) == 0.0

    def test_opposite_constants_give_one(self):
        assert metrics.sad(mask(np.ones((3, 3))), mask(np.zeros((3, 3)))) == 1.0

    def test_2x2_hand_case(self):
        assert metrics.sad(M_2X2, G_2X2) == pytest.approx(0.25, abs=0)


def brute_force_gradient_magnitude(arr):
    """Independent oracle: explicit 2-D correlation with replicated edges."""
    radius = int(np.ceil(GRAD_TRUNCATE * GRAD_SIGMA))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / GRAD_SIGMA) ** 2)
    g /= g.sum()
    d = -x / GRAD_SIGMA**2 * g
    kx = np.outer(g, d)   # rows smooth, columns differentiate
    ky = np.outer(d, g)
    padded = np.pad(arr, radius, mode="edge")
    h, w = arr.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            window = padded[i:i + 2 * radius + 1, j:j + 2 * radius + 1]
            gx[i, j] = (window * kx).sum()
            gy[i, j] = (window * ky).sum()
    return np.hypot(gx, gy)


class TestGrad:
    def test_equal_masks_give_zero(self):
        m = mask(np.random.default_rng(2).random((6, 6)))
        assert metrics.grad(m, m) == 0.0

    def test_constants_give_zero(self):
        assert metrics.grad(mask(np.full((8, 8), 0.3)), mask(np.full((8, 8), 0.9))) == 0.0

    def test_step_edge_against_brute_force_oracle(self):
        step = np.zeros((16, 16))
        step[:, 8:] = 1.0
        shifted = np.zeros((16, 16))
        shifted[:, 6:] = 1.0
        assert metrics.grad(mask(step), mask(step)) == 0.0
        value = metrics.grad(mask(step), mask(shifted))
        gm = brute_force_gradient_magnitude(step)
        gs = brute_force_gradient_magnitude(shifted)
        oracle = np.mean((gm - gs) ** 2)
        assert value > 0.0
        assert value == pytest.approx(oracle, rel=1e-10)


class TestRegionRestriction:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=120, deadline=None)
    def test_out_of_region_mutation_changes_nothing(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.random((8, 8))
        truth = rng.random((8, 8))
        region = rng.random((8, 8)) < 0.5
        if not region.any():
            region[0, 0] = True
        mutated = np.where(region, pred, rng.random((8, 8)))
        for fn in (metrics.mse, metrics.sad, metrics.grad):
            assert fn(mask(pred), mask(truth), region) == \
                fn(mask(mutated), mask(truth), region)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_symmetry_nonnegativity_and_mse_below_sad(self, seed):
        rng = np.random.default_rng(seed)
        a, b = mask(rng.random((6, 6))), mask(rng.random((6, 6)))
        for fn in (metrics.mse, metrics.sad, metrics.grad):
            assert fn(a, b) == fn(b, a) >= 0.0
        assert metrics.mse(a, b) <= metrics.sad(a, b) + 1e-15

    def test_region_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            metrics.mse(M_2X2, G_2X2, region=np.ones((3, 3), dtype=bool))


class TestReport:
    def test_aggregate_is_mean_of_per_sample(self):
        a = mask(np.zeros((4, 4)))
        preds = {"x": mask(np.full((4, 4), 0.1)).copy(), "y": mask(np.full((4, 4), 0.3))}
        # Per-sample MSE 0.01 and 0.09 -> aggregate 0.05.
        report = metrics.evaluate_dataset(preds, {"x": a, "y": a})
        assert report.mse == pytest.approx(0.05)

    def test_display_scale_convention(self):
        assert metrics.format_scaled(0.0004978) == "4.978"

    def test_table_uses_scaled_values(self):
        report = metrics.evaluate_dataset({"s": M_2X2}, {"s": G_2X2})
        table = report.format_table()
        assert "MSE*1e4" in table and "1250.000" in table

    def test_empty_prediction_set_rejected(self):
        with pytest.raises(ValueError):
            metrics.evaluate_dataset({}, {})

    def test_id_mismatch_lists_ids(self):
        with pytest.raises(ValueError, match="extra"):
            metrics.evaluate_dataset({"extra": M_2X2}, {"other": G_2X2})

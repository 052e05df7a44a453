"""Trimap construction, the diffusion solver, and QC reports."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from stagematte.raster import (TRIMAP_BACKGROUND, TRIMAP_FOREGROUND,
                               TRIMAP_UNKNOWN, AlphaMask, Image, Trimap)
from stagematte.supervisor import (QCThresholds, SolveInfo, qc_validate,
                                   supervise_solve, trimap_from_alpha)


def trimap_oracle(alpha: np.ndarray, band_radius: int) -> np.ndarray:
    """Brute-force Unknown band: dilation of the soft region and alpha boundary."""
    soft = (alpha > 0.001) & (alpha < 0.999)
    fg = alpha >= 0.999
    h, w = alpha.shape
    boundary = np.zeros_like(fg)
    for r in range(h):
        for c in range(w):
            if not fg[r, c]:
                continue
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and not fg[rr, cc]:
                        boundary[r, c] = True
    unknown = ndimage.binary_dilation(soft | boundary, structure=np.ones((3, 3)),
                                      iterations=band_radius)
    labels = np.where(alpha >= 0.5, TRIMAP_FOREGROUND, TRIMAP_BACKGROUND).astype(np.uint8)
    labels[unknown] = TRIMAP_UNKNOWN
    return labels


class TestTrimapFromAlpha:
    def test_binary_square_band_matches_brute_force(self):
        alpha = np.zeros((8, 8))
        alpha[2:6, 2:6] = 1.0
        tri = trimap_from_alpha(AlphaMask(alpha), band_radius=1)
        assert np.array_equal(tri.labels, trimap_oracle(alpha, 1))

    def test_soft_ramp_band_matches_brute_force(self):
        col = np.linspace(0.0, 1.0, 10)
        alpha = np.tile(col, (10, 1))
        for radius in (1, 2):
            tri = trimap_from_alpha(AlphaMask(alpha), band_radius=radius)
            assert np.array_equal(tri.labels, trimap_oracle(alpha, radius))

    def test_constant_foreground_has_no_unknown(self):
        tri = trimap_from_alpha(AlphaMask(np.ones((6, 6))), band_radius=2)
        assert np.all(tri.labels == TRIMAP_FOREGROUND)

    def test_labels_partition_the_pixels(self):
        rng = np.random.default_rng(0)
        alpha = rng.uniform(size=(12, 12))
        tri = trimap_from_alpha(AlphaMask(alpha), band_radius=1)
        total = tri.foreground.sum() + tri.background.sum() + tri.unknown.sum()
        assert total == alpha.size

    def test_zero_band_radius_rejected(self):
        with pytest.raises(ValueError):
            trimap_from_alpha(AlphaMask(np.ones((4, 4))), band_radius=0)


def _uniform_image(h, w, value=0.5):
    return Image(np.full((h, w, 3), value))


class TestSupervisorSolve:
    def test_empty_unknown_returns_labels(self):
        labels = np.full((4, 4), TRIMAP_BACKGROUND, dtype=np.uint8)
        labels[:2] = TRIMAP_FOREGROUND
        info = SolveInfo(iterations=-1)
        out = supervise_solve(_uniform_image(4, 4), Trimap(labels), info=info)
        assert np.array_equal(out.data, np.where(labels == TRIMAP_FOREGROUND, 1.0, 0.0))
        assert info.iterations == 0

    def test_uniform_strip_converges_to_linear_profile(self):
        labels = np.array([[TRIMAP_FOREGROUND, TRIMAP_UNKNOWN, TRIMAP_UNKNOWN,
                            TRIMAP_UNKNOWN, TRIMAP_BACKGROUND]], dtype=np.uint8)
        out = supervise_solve(_uniform_image(1, 5), Trimap(labels), tol=1e-9)
        expected = np.array([[1.0, 0.75, 0.5, 0.25, 0.0]])
        assert np.abs(out.data - expected).max() < 1e-6

    def test_labeled_pixels_are_bit_exact(self):
        rng = np.random.default_rng(1)
        img = Image(rng.uniform(size=(8, 8, 3)))
        labels = rng.choice([TRIMAP_BACKGROUND, TRIMAP_UNKNOWN, TRIMAP_FOREGROUND],
                            size=(8, 8)).astype(np.uint8)
        tri = Trimap(labels)
        out = supervise_solve(img, tri, iters=100)
        assert np.all(out.data[tri.foreground] == 1.0)
        assert np.all(out.data[tri.background] == 0.0)

    def test_max_principle_over_random_trimaps(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            img = Image(rng.uniform(size=(8, 8, 3)))
            labels = rng.choice([TRIMAP_BACKGROUND, TRIMAP_UNKNOWN, TRIMAP_FOREGROUND],
                                size=(8, 8), p=[0.3, 0.4, 0.3]).astype(np.uint8)
            tri = Trimap(labels)
            out = supervise_solve(img, tri, iters=60)
            assert out.data.min() >= 0.0 and out.data.max() <= 1.0
            assert np.all(out.data[tri.foreground] == 1.0)
            assert np.all(out.data[tri.background] == 0.0)

    def test_update_magnitudes_are_non_increasing(self):
        rng = np.random.default_rng(3)
        img = Image(rng.uniform(size=(10, 10, 3)))
        labels = np.full((10, 10), TRIMAP_UNKNOWN, dtype=np.uint8)
        labels[0] = TRIMAP_FOREGROUND
        labels[-1] = TRIMAP_BACKGROUND
        info = SolveInfo(iterations=-1)
        supervise_solve(img, Trimap(labels), iters=200, info=info)
        updates = np.array(info.max_updates)
        assert np.all(np.diff(updates) <= 1e-12)

    def test_unreachable_pixels_default_to_half(self):
        labels = np.full((5, 5), TRIMAP_UNKNOWN, dtype=np.uint8)
        info = SolveInfo(iterations=-1)
        out = supervise_solve(_uniform_image(5, 5), Trimap(labels), info=info)
        assert np.all(out.data == 0.5)
        assert info.unreachable == 25

    def test_dimension_mismatch_rejected(self):
        labels = np.full((4, 4), TRIMAP_FOREGROUND, dtype=np.uint8)
        with pytest.raises(ValueError):
            supervise_solve(_uniform_image(4, 5), Trimap(labels))


def _band_trimap(h, w):
    labels = np.full((h, w), TRIMAP_FOREGROUND, dtype=np.uint8)
    labels[h // 2:] = TRIMAP_BACKGROUND
    labels[h // 2 - 1:h // 2 + 1] = TRIMAP_UNKNOWN
    return Trimap(labels)


class TestQCValidate:
    def _fixture(self):
        rng = np.random.default_rng(4)
        tri = _band_trimap(8, 8)
        sup = AlphaMask((rng.uniform(size=(8, 8)) > 0.5).astype(float))
        return tri, sup

    def test_identical_candidate_passes(self):
        tri, sup = self._fixture()
        report = qc_validate({"a": sup}, {"a": sup.copy()}, {"a": tri},
                             QCThresholds(mse=1e-9, sad=1e-9, grad=1e-9))
        assert report.all_passed
        assert report.results[0].mse == 0.0

    def test_inverted_candidate_hits_maximal_band_mse(self):
        tri, sup = self._fixture()
        inv = AlphaMask(1.0 - sup.data)
        report = qc_validate({"a": inv}, {"a": sup}, {"a": tri}, QCThresholds())
        # The supervisor mask is binary, so inversion maximizes every band error.
        assert report.results[0].mse == 1.0
        assert not report.results[0].passed
        rng = np.random.default_rng(5)
        other = AlphaMask(rng.uniform(size=(8, 8)))
        lesser = qc_validate({"a": other}, {"a": sup}, {"a": tri}, QCThresholds())
        assert lesser.results[0].mse <= 1.0

    def test_zero_threshold_means_bit_equal_on_band(self):
        tri, sup = self._fixture()
        off_band = sup.copy()
        off_band.data[0, 0] = 1.0 - off_band.data[0, 0]
        report = qc_validate({"a": off_band}, {"a": sup}, {"a": tri},
                             QCThresholds(mse=0.0))
        assert report.all_passed
        on_band = sup.copy()
        row = np.argwhere(tri.unknown)[0]
        on_band.data[row[0], row[1]] += 0.25
        report = qc_validate({"a": on_band}, {"a": sup}, {"a": tri},
                             QCThresholds(mse=0.0))
        assert not report.all_passed

    def test_band_pixel_count_reported(self):
        tri, sup = self._fixture()
        report = qc_validate({"a": sup}, {"a": sup}, {"a": tri}, QCThresholds())
        assert report.results[0].band_pixels == int(tri.unknown.sum())

    def test_disabled_metrics_are_ignored(self):
        tri, sup = self._fixture()
        inv = AlphaMask(1.0 - sup.data)
        report = qc_validate({"a": inv}, {"a": sup}, {"a": tri},
                             QCThresholds(mse=None, sad=None, grad=None))
        assert report.all_passed

    def test_id_mismatch_rejected(self):
        tri, sup = self._fixture()
        with pytest.raises(ValueError):
            qc_validate({"a": sup}, {"b": sup}, {"a": tri}, QCThresholds())

    def test_table_lists_each_sample(self):
        tri, sup = self._fixture()
        report = qc_validate({"s1": sup, "s2": sup}, {"s1": sup, "s2": sup},
                             {"s1": tri, "s2": tri}, QCThresholds())
        table = report.format_table()
        assert "s1" in table and "s2" in table and "Pass" in table

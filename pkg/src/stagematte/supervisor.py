"""Trimap-based quality control: trimap construction, a color-affinity
diffusion solver used as an independent oracle, and band-restricted reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import metrics as metrics_mod
from .raster import (AlphaMask, Image, Trimap, TRIMAP_BACKGROUND,
                     TRIMAP_FOREGROUND, TRIMAP_UNKNOWN, _check_same_size)

AFFINITY_BANDWIDTH = 0.1


def trimap_from_alpha(alpha: AlphaMask, band_radius: int) -> Trimap:
    """Dilate the soft/boundary region of a ground-truth matte into an Unknown band."""
    if band_radius < 1:
        raise ValueError("band_radius must be >= 1")
    a = alpha.data
    soft = (a > 0.001) & (a < 0.999)
    fg = a >= 0.999
    # Boundary pixels: hard foreground adjacent to anything not hard foreground.
    eroded = ndimage.binary_erosion(fg, structure=np.ones((3, 3)), border_value=1)
    boundary = fg & ~eroded
    unknown = ndimage.binary_dilation(
        soft | boundary, structure=np.ones((3, 3)), iterations=band_radius)
    labels = np.where(a >= 0.5, TRIMAP_FOREGROUND, TRIMAP_BACKGROUND).astype(np.uint8)
    labels[unknown] = TRIMAP_UNKNOWN
    return Trimap(labels)


@dataclass
class SolveInfo:
    iterations: int
    max_updates: list = field(default_factory=list)
    unreachable: int = 0


def supervise_solve(image: Image, trimap: Trimap, iters: int = 2000,
                    tol: float = 1e-6, bandwidth: float = AFFINITY_BANDWIDTH,
                    info: SolveInfo | None = None) -> AlphaMask:
    """Diffuse alpha through the Unknown band using color-affinity weights.

    Each Unknown pixel repeatedly becomes the affinity-weighted mean of its
    4-neighborhood, with weights exp(-||I_i - I_j||^2 / h^2); labeled pixels
    stay fixed at 0/1. Unknown pixels with no path to a label default to 0.5.
    """
    _check_same_size(image, trimap, "supervise_solve")
    h, w = trimap.height, trimap.width
    unknown = trimap.unknown
    alpha = np.where(trimap.foreground, 1.0, 0.0)
    if not unknown.any():
        if info is not None:
            info.iterations = 0
        return AlphaMask(alpha)

    # Reachability: unknown pixels connected (4-neighborhood) to any labeled pixel.
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labeled = ~unknown
    reach = labeled.copy()
    while True:
        grown = ndimage.binary_dilation(reach, structure=structure) & (labeled | unknown)
        if np.array_equal(grown, reach):
            break
        reach = grown
    unreachable = unknown & ~reach
    alpha[unknown] = 0.5

    img = image.data
    inv_h2 = 1.0 / bandwidth**2

    def edge_weight(shift_axis, shift):
        diff = np.zeros((h, w))
        sq = ((img - np.roll(img, shift, axis=shift_axis)) ** 2).sum(axis=2)
        diff[:] = np.exp(-sq * inv_h2)
        return diff

    w_up = edge_weight(0, 1)     # weight to the pixel above
    w_down = edge_weight(0, -1)
    w_left = edge_weight(1, 1)
    w_right = edge_weight(1, -1)

    active = unknown & reach
    n_iter = 0
    for n_iter in range(1, iters + 1):
        acc = np.zeros((h, w))
        norm = np.zeros((h, w))
        # Up neighbor.
        acc[1:] += w_up[1:] * alpha[:-1]
        norm[1:] += w_up[1:]
        acc[:-1] += w_down[:-1] * alpha[1:]
        norm[:-1] += w_down[:-1]
        acc[:, 1:] += w_left[:, 1:] * alpha[:, :-1]
        norm[:, 1:] += w_left[:, 1:]
        acc[:, :-1] += w_right[:, :-1] * alpha[:, 1:]
        norm[:, :-1] += w_right[:, :-1]
        new = np.where(norm > 0, acc / np.maximum(norm, 1e-300), alpha)
        delta = np.abs(new - alpha)[active].max() if active.any() else 0.0
        alpha[active] = new[active]
        if info is not None:
            info.max_updates.append(float(delta))
        if delta < tol:
            break
    alpha[unreachable] = 0.5
    if info is not None:
        info.iterations = n_iter
        info.unreachable = int(unreachable.sum())
    return AlphaMask(np.clip(alpha, 0.0, 1.0))


@dataclass
class QCThresholds:
    mse: float | None = 1e-2
    sad: float | None = None
    grad: float | None = None


@dataclass
class QCSampleResult:
    sample_id: str
    mse: float
    sad: float
    grad: float
    band_pixels: int
    passed: bool


@dataclass
class QCReport:
    band_radius: int
    results: list = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {
            "band_radius": self.band_radius,
            "all_passed": self.all_passed,
            "results": [vars(r) for r in self.results],
        }

    def format_table(self) -> str:
        lines = [f"{'Sample':<20}{'MSE*1e4':>10}{'SAD*1e3':>10}{'Grad*1e5':>11}{'Band':>8}{'Pass':>6}"]
        for r in self.results:
            lines.append(f"{r.sample_id:<20}{r.mse * 1e4:>10.3f}{r.sad * 1e3:>10.3f}"
                         f"{r.grad * 1e5:>11.3f}{r.band_pixels:>8}"
                         f"{'yes' if r.passed else 'NO':>6}")
        return "\n".join(lines)


def qc_validate(candidates: dict, supervisor_masks: dict, trimaps: dict,
                thresholds: QCThresholds, band_radius: int = 0) -> QCReport:
    """Band-restricted comparison of candidate mattes against supervisor solves."""
    ids = sorted(candidates)
    missing = sorted(set(candidates) ^ set(supervisor_masks)) + \
        sorted(set(candidates) ^ set(trimaps))
    if missing:
        raise ValueError(f"qc id mismatch: {sorted(set(missing))}")
    report = QCReport(band_radius=band_radius)
    for sample_id in ids:
        cand = candidates[sample_id]
        sup = supervisor_masks[sample_id]
        band = trimaps[sample_id].unknown
        vals = {
            "mse": metrics_mod.mse(cand, sup, band),
            "sad": metrics_mod.sad(cand, sup, band),
            "grad": metrics_mod.grad(cand, sup, band),
        }
        passed = all(vals[k] <= t for k, t in vars(thresholds).items() if t is not None)
        report.results.append(QCSampleResult(
            sample_id=sample_id, band_pixels=int(band.sum()), passed=passed, **vals))
    return report

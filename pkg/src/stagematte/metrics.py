"""Alpha-matte error metrics: MSE, SAD and the gradient-magnitude metric."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filters import GRAD_SIGMA, gradient_magnitude
from .raster import AlphaMask, _check_same_size

# Display scale conventions for reports.
MSE_SCALE = 1e4
SAD_SCALE = 1e3
GRAD_SCALE = 1e5


def _region_mask(mask: AlphaMask, region) -> np.ndarray:
    if region is None:
        return np.ones((mask.height, mask.width), dtype=bool)
    region = np.asarray(region, dtype=bool)
    if region.shape != (mask.height, mask.width):
        raise ValueError(f"region shape {region.shape} does not match mask")
    if not region.any():
        raise ValueError("empty evaluation region")
    return region


def mse(pred: AlphaMask, truth: AlphaMask, region=None) -> float:
    """Mean squared error over the region (default: all pixels)."""
    _check_same_size(pred, truth, "mse")
    sel = _region_mask(pred, region)
    diff = pred.data[sel] - truth.data[sel]
    return float(np.mean(diff**2))


def sad(pred: AlphaMask, truth: AlphaMask, region=None) -> float:
    """Per-pixel mean absolute difference over the region."""
    _check_same_size(pred, truth, "sad")
    sel = _region_mask(pred, region)
    return float(np.mean(np.abs(pred.data[sel] - truth.data[sel])))


def grad(pred: AlphaMask, truth: AlphaMask, region=None, sigma: float = GRAD_SIGMA) -> float:
    """Mean squared difference of Gaussian-derivative gradient magnitudes.

    With a region, out-of-region values are zeroed before filtering so the
    result depends only on in-region pixels of both masks.
    """
    _check_same_size(pred, truth, "grad")
    sel = _region_mask(pred, region)
    p, t = pred.data, truth.data
    if region is not None:
        p = np.where(sel, p, 0.0)
        t = np.where(sel, t, 0.0)
    gm = gradient_magnitude(p, sigma)
    gt = gradient_magnitude(t, sigma)
    return float(np.mean((gm[sel] - gt[sel]) ** 2))


@dataclass
class SampleMetrics:
    sample_id: str
    mse: float
    sad: float
    grad: float
    pixel_count: int


@dataclass
class MetricReport:
    per_sample: list = field(default_factory=list)

    @property
    def mse(self) -> float:
        return float(np.mean([s.mse for s in self.per_sample]))

    @property
    def sad(self) -> float:
        return float(np.mean([s.sad for s in self.per_sample]))

    @property
    def grad(self) -> float:
        return float(np.mean([s.grad for s in self.per_sample]))

    def to_dict(self) -> dict:
        return {
            "aggregate": {"mse": self.mse, "sad": self.sad, "grad": self.grad},
            "per_sample": [
                {"id": s.sample_id, "mse": s.mse, "sad": s.sad,
                 "grad": s.grad, "pixel_count": s.pixel_count}
                for s in self.per_sample
            ],
        }

    def format_table(self, label: str = "dataset") -> str:
        """Aligned table using the x1e4 / x1e3 / x1e5 display conventions."""
        lines = [f"{'Sample':<20}{'MSE*1e4':>12}{'SAD*1e3':>12}{'Grad*1e5':>12}"]
        for s in self.per_sample:
            lines.append(
                f"{s.sample_id:<20}{s.mse * MSE_SCALE:>12.3f}"
                f"{s.sad * SAD_SCALE:>12.3f}{s.grad * GRAD_SCALE:>12.3f}"
            )
        lines.append(
            f"{label:<20}{self.mse * MSE_SCALE:>12.3f}"
            f"{self.sad * SAD_SCALE:>12.3f}{self.grad * GRAD_SCALE:>12.3f}"
        )
        return "\n".join(lines)


def format_scaled(value: float, scale: float = MSE_SCALE) -> str:
    """Render a raw metric under a display scale, e.g. 0.0004978 -> '4.978'."""
    return f"{value * scale:.3f}"


def evaluate_dataset(predictions: dict, ground_truths: dict, regions: dict | None = None) -> MetricReport:
    """Per-sample metrics plus aggregates for matching id -> AlphaMask dicts."""
    if not predictions:
        raise ValueError("empty prediction set")
    missing = sorted(set(predictions) ^ set(ground_truths))
    if missing:
        raise ValueError(f"prediction/ground-truth id mismatch: {missing}")
    report = MetricReport()
    for sample_id in sorted(predictions):
        pred = predictions[sample_id]
        truth = ground_truths[sample_id]
        region = regions.get(sample_id) if regions else None
        sel = _region_mask(pred, region)
        report.per_sample.append(SampleMetrics(
            sample_id=sample_id,
            mse=mse(pred, truth, region),
            sad=sad(pred, truth, region),
            grad=grad(pred, truth, region),
            pixel_count=int(sel.sum()),
        ))
    return report

"""Training procedures: base training, scribble fine-tuning, distillation.

The teacher is fitted to ground-truth mattes on clean composites, then
refined on hybrid batches mixing base samples (dense loss) with annotated
capture-stage samples (selective scribble loss). The refined teacher labels
unlabeled capture-stage data, and the student is fitted to those pseudo
labels in two phases (coarse only, then jointly with the refiner).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import raster
from .autodiff import Tensor
from .filters import GRAD_SIGMA, gaussian_kernel_1d
from .nets import (AdamHyper, ParamSet, STUDENT_REFINER_LAYERS, adam_step,
                   input_stack, student_graph, teacher_graph)
from .raster import AlphaMask, ScribbleMap
from .stage import DatasetManifest

GRAD_LOSS_WEIGHT = 0.5


@dataclass
class TrainConfig:
    batch_size: int = 16
    iterations: int = 2000
    lr_initial: float = 5e-5
    lr_drop_iteration: int = 600
    lr_after: float = 2.5e-5
    base_fraction: float = 0.8
    noise_sigma_max: float = 0.1
    augment_scribble_samples: bool = True
    student_epochs_coarse: int = 5
    student_epochs_joint: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.base_fraction <= 1.0:
            raise ValueError("base_fraction must be in [0, 1]")
        if self.lr_initial <= 0 or self.lr_after <= 0:
            raise ValueError("learning rates must be > 0")

    def lr_at(self, iteration: int) -> float:
        return self.lr_initial if iteration < self.lr_drop_iteration else self.lr_after

    @classmethod
    def for_base_training(cls, **overrides) -> "TrainConfig":
        # From-scratch training needs a larger rate than fine-tuning.
        defaults = dict(lr_initial=1e-3, lr_after=5e-4, iterations=800,
                        lr_drop_iteration=600, base_fraction=1.0)
        defaults.update(overrides)
        return cls(**defaults)


# --------------------------------------------------------------------------
# Losses

_G0 = gaussian_kernel_1d(GRAD_SIGMA, order=0)
_G1 = gaussian_kernel_1d(GRAD_SIGMA, order=1)


def _deriv_graph(t: Tensor, axis_main: int, axis_cross: int) -> Tensor:
    # NHWC: axis 1 is y (rows), axis 2 is x (columns).
    d = ad.correlate1d_clamped(t, _G1, axis=axis_main)
    return ad.correlate1d_clamped(d, _G0, axis=axis_cross)


def base_loss_graph(pred: Tensor, truth: np.ndarray) -> Tensor:
    """L1 on alpha plus weighted L1 on its Gaussian-derivative components."""
    gt = ad.constant(truth)
    l1 = ad.mean(ad.absolute(ad.sub(pred, gt)))
    gx = ad.mean(ad.absolute(ad.sub(_deriv_graph(pred, 2, 1), _deriv_graph(gt, 2, 1))))
    gy = ad.mean(ad.absolute(ad.sub(_deriv_graph(pred, 1, 2), _deriv_graph(gt, 1, 2))))
    return ad.add(l1, ad.scale(ad.add(gx, gy), GRAD_LOSS_WEIGHT * 0.5))


def base_loss(pred: AlphaMask, truth: AlphaMask) -> float:
    """Scalar value of the dense training loss (no gradients)."""
    raster._check_same_size(pred, truth, "base_loss")
    p = ad.constant(pred.data[None, :, :, None])
    return float(base_loss_graph(p, truth.data[None, :, :, None]).data)


def scribble_loss_graph(pred: Tensor, scribbles: list) -> Tensor:
    """Sum_i |M_i - Y_i| over annotated pixels, normalized per sample.

    `scribbles` holds one ScribbleMap per batch row of `pred`.
    """
    weights = np.zeros_like(pred.data)
    targets = np.zeros_like(pred.data)
    for row, s in enumerate(scribbles):
        count = int(s.annotated.sum())
        if count == 0:
            raise ValueError("scribble sample annotates no pixels")
        weights[row, :, :, 0] = s.annotated / count
        targets[row, :, :, 0] = s.targets
    diff = ad.absolute(ad.sub(pred, ad.constant(targets)))
    return ad.total(ad.mul(diff, ad.constant(weights)))


def scribble_loss(pred: AlphaMask, scribbles: ScribbleMap) -> tuple[float, int]:
    """Selective loss: (sum over annotated pixels of |M - Y|, |S|)."""
    raster._check_same_size(pred, scribbles, "scribble_loss")
    sel = scribbles.annotated
    count = int(sel.sum())
    if count == 0:
        raise ValueError("scribble sample annotates no pixels")
    total = float(np.abs(pred.data[sel] - scribbles.targets[sel]).sum())
    return total, count


def augment_noise(image: np.ndarray, background: np.ndarray, sigma_max: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Add Gaussian noise with per-sample sigma ~ U[0, sigma_max] to I and B."""
    if sigma_max < 0:
        raise ValueError("sigma_max must be >= 0")
    if sigma_max == 0:
        return image, background
    sigma = rng.uniform(0.0, sigma_max)
    img = np.clip(image + rng.normal(0.0, sigma, size=image.shape), 0.0, 1.0)
    bg = np.clip(background + rng.normal(0.0, sigma, size=background.shape), 0.0, 1.0)
    return img, bg


# --------------------------------------------------------------------------
# Data access

@dataclass
class LoadedSample:
    sample_id: str
    image: np.ndarray            # (H, W, 3)
    background: np.ndarray       # (H, W, 3)
    role: str = "base"
    alpha: np.ndarray | None = None       # (H, W, 1)
    scribbles: ScribbleMap | None = None
    pseudo: np.ndarray | None = None      # (H, W, 1)


def load_split(manifest: DatasetManifest, role: str) -> list:
    samples = []
    for rec in manifest.split(role):
        img = raster.load_image(manifest.resolve(rec.image)).data
        bg = raster.load_image(manifest.resolve(rec.background)).data
        sample = LoadedSample(rec.sample_id, img, bg, role=rec.role)
        if rec.alpha_gt:
            sample.alpha = raster.load_alpha(manifest.resolve(rec.alpha_gt)).data[..., None]
        if rec.scribbles:
            sample.scribbles = raster.load_scribbles(manifest.resolve(rec.scribbles))
        if rec.pseudo_label:
            sample.pseudo = raster.load_alpha(manifest.resolve(rec.pseudo_label)).data[..., None]
        samples.append(sample)
    return samples


def _check_trainable(samples, what: str) -> None:
    """Validation data is reserved for evaluation and must never be trained on."""
    for s in samples:
        if s.role == "validation":
            raise ValueError(f"{what}: validation sample {s.sample_id} in a training pool")


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def sample_hybrid_batch(base_ds: list, scribble_ds: list, config: TrainConfig,
                        iteration: int) -> tuple[list, list]:
    """Exact (n_base, batch - n_base) split, deterministic per (seed, iteration)."""
    n_base = round_half_up(config.batch_size * config.base_fraction)
    n_scrib = config.batch_size - n_base
    if n_base > 0 and not base_ds:
        raise ValueError("base pool empty but base_fraction > 0")
    if n_scrib > 0 and not scribble_ds:
        raise ValueError("scribble pool empty but base_fraction < 1")
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, iteration)))
    base = [base_ds[i] for i in rng.integers(0, len(base_ds), size=n_base)] if n_base else []
    scrib = [scribble_ds[i] for i in rng.integers(0, len(scribble_ds), size=n_scrib)] if n_scrib else []
    return base, scrib


# --------------------------------------------------------------------------
# Teacher training

class LossLog:
    """One line per iteration: iteration, lr, base loss, scribble loss, mix."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("iteration\tlr\tbase_loss\tscribble_loss\tn_base\tn_scribble\n")

    def append(self, iteration, lr, base, scrib, n_base, n_scrib):
        row = (iteration, lr, base, scrib, n_base, n_scrib)
        self.rows.append(row)
        if self.path:
            with self.path.open("a") as f:
                f.write(f"{iteration}\t{lr:.8g}\t{base:.8g}\t{scrib:.8g}\t{n_base}\t{n_scrib}\n")


def _stack(samples, attr):
    return np.stack([getattr(s, attr) for s in samples])


def _teacher_batch_loss(params: ParamSet, graph: dict, base, scrib,
                        config: TrainConfig, aug_rng) -> tuple[Tensor, float, float]:
    terms = []
    base_val = scrib_val = 0.0
    if base:
        imgs, bgs = [], []
        for s in base:
            i, b = augment_noise(s.image, s.background, config.noise_sigma_max, aug_rng)
            imgs.append(i)
            bgs.append(b)
        x = input_stack(np.stack(imgs), np.stack(bgs))
        pred = teacher_graph(params.arch, graph, x)
        loss_b = base_loss_graph(pred, _stack(base, "alpha"))
        base_val = float(loss_b.data)
        terms.append(ad.scale(loss_b, len(base) / config.batch_size))
    if scrib:
        imgs, bgs = [], []
        for s in scrib:
            if config.augment_scribble_samples:
                i, b = augment_noise(s.image, s.background, config.noise_sigma_max, aug_rng)
            else:
                i, b = s.image, s.background
            imgs.append(i)
            bgs.append(b)
        x = input_stack(np.stack(imgs), np.stack(bgs))
        pred = teacher_graph(params.arch, graph, x)
        loss_s = scribble_loss_graph(pred, [s.scribbles for s in scrib])
        scrib_val = float(loss_s.data) / len(scrib)
        terms.append(ad.scale(loss_s, 1.0 / config.batch_size))
    loss = terms[0]
    for t in terms[1:]:
        loss = ad.add(loss, t)
    return loss, base_val, scrib_val


def _optimize(params: ParamSet, loss: Tensor, graph: dict, lr: float,
              iteration: int) -> None:
    loss.backward()
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"training diverged at iteration {iteration}")
    grads = {name: t.grad for name, t in graph.items() if t.grad is not None}
    adam_step(params, grads, AdamHyper(lr=lr))


def train_teacher_base(manifest: DatasetManifest, config: TrainConfig,
                       params: ParamSet, log: LossLog | None = None) -> ParamSet:
    """Fit the teacher to ground-truth mattes of the clean base split."""
    base_ds = load_split(manifest, "base")
    if not any(s.alpha is not None for s in base_ds):
        raise ValueError("base split has no ground-truth alpha")
    _check_trainable(base_ds, "train_teacher_base")
    log = log or LossLog()
    params = params.copy()
    aug_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xA0)))
    for it in range(config.iterations):
        batch, _ = sample_hybrid_batch(base_ds, [], _pure_base(config), it)
        graph = params.as_graph_tensors()
        loss, base_val, _ = _teacher_batch_loss(params, graph, batch, [], config, aug_rng)
        lr = config.lr_at(it)
        _optimize(params, loss, graph, lr, it)
        log.append(it, lr, base_val, 0.0, len(batch), 0)
    return params


def _pure_base(config: TrainConfig) -> TrainConfig:
    if config.base_fraction == 1.0:
        return config
    cfg = TrainConfig(**{**config.__dict__, "base_fraction": 1.0})
    return cfg


def finetune_teacher(params: ParamSet, manifest: DatasetManifest,
                     config: TrainConfig, log: LossLog | None = None) -> ParamSet:
    """Hybrid fine-tuning: dense loss on base samples, selective on scribbled ones."""
    base_ds = load_split(manifest, "base")
    scribble_ds = [s for s in load_split(manifest, "capture_stage") if s.scribbles is not None]
    if config.base_fraction < 1.0 and not scribble_ds:
        raise ValueError("no scribble-annotated capture-stage samples")
    _check_trainable(base_ds + scribble_ds, "finetune_teacher")
    log = log or LossLog()
    params = params.copy()
    aug_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xF1)))
    for it in range(config.iterations):
        base, scrib = sample_hybrid_batch(base_ds, scribble_ds, config, it)
        graph = params.as_graph_tensors()
        loss, base_val, scrib_val = _teacher_batch_loss(
            params, graph, base, scrib, config, aug_rng)
        lr = config.lr_at(it)
        _optimize(params, loss, graph, lr, it)
        log.append(it, lr, base_val, scrib_val, len(base), len(scrib))
    return params


def predict_teacher_batch(params: ParamSet, samples: list) -> np.ndarray:
    x = input_stack(_stack(samples, "image"), _stack(samples, "background"))
    out = teacher_graph(params.arch, params.as_graph_tensors(trainable=()), x)
    return out.data


# --------------------------------------------------------------------------
# Distillation

def distill_labels(params: ParamSet, manifest: DatasetManifest,
                   subdir: str = "pseudo") -> DatasetManifest:
    """Write teacher predictions for the unlabeled split as pseudo labels."""
    records = manifest.split("unlabeled")
    out_dir = manifest.root / subdir
    out_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        if not rec.background:
            raise ValueError(f"unlabeled record {rec.sample_id} lacks a background")
        img = raster.load_image(manifest.resolve(rec.image)).data
        bg = raster.load_image(manifest.resolve(rec.background)).data
        sample = LoadedSample(rec.sample_id, img, bg)
        pred = predict_teacher_batch(params, [sample])[0, :, :, 0]
        rel = f"{subdir}/{rec.sample_id}.png"
        raster.save_png(AlphaMask(pred), manifest.resolve(rel))
        rec.pseudo_label = rel
    manifest.save(manifest.root / "manifest.jsonl")
    return manifest


# --------------------------------------------------------------------------
# Student training

def downsample_scribbles(scribbles: ScribbleMap, factor: int = 4) -> ScribbleMap:
    """Majority vote within each factor x factor cell; ties become Unlabeled."""
    h, w = scribbles.height, scribbles.width
    if h % factor or w % factor:
        raise ValueError("scribble size not divisible by downsampling factor")
    cells = scribbles.labels.reshape(h // factor, factor, w // factor, factor)
    fg = (cells == raster.SCRIBBLE_FOREGROUND).sum(axis=(1, 3))
    bg = (cells == raster.SCRIBBLE_BACKGROUND).sum(axis=(1, 3))
    out = np.full((h // factor, w // factor), raster.SCRIBBLE_UNLABELED, dtype=np.uint8)
    out[fg > bg] = raster.SCRIBBLE_FOREGROUND
    out[bg > fg] = raster.SCRIBBLE_BACKGROUND
    out[(fg == bg)] = raster.SCRIBBLE_UNLABELED
    return ScribbleMap(out)


def _epoch_batches(n_samples: int, batch_size: int, epochs: int, seed: int):
    """Deterministic shuffled epoch batches; yields (iteration, index list)."""
    it = 0
    for epoch in range(epochs):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5E, epoch)))
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, batch_size):
            yield it, order[start:start + batch_size]
            it += 1


def _downsample4(arr: np.ndarray) -> np.ndarray:
    t = ad.resize_bilinear(ad.constant(arr), arr.shape[1] // 4, arr.shape[2] // 4)
    return t.data


def finetune_student(params: ParamSet, manifest: DatasetManifest, config: TrainConfig,
                     log: LossLog | None = None) -> ParamSet:
    """Two-phase fit to pseudo labels: coarse stage alone, then jointly."""
    ds = [s for s in load_split(manifest, "unlabeled") if s.pseudo is not None]
    if not ds:
        raise ValueError("no pseudo-labeled samples; run distillation first")
    _check_trainable(ds, "finetune_student")
    log = log or LossLog()
    params = params.copy()
    coarse_only = {k for k in params.tensors
                   if k.split(".")[0] not in STUDENT_REFINER_LAYERS}
    aug_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0x5D)))

    def run_phase(epochs, trainable, refine_loss, phase_seed, it_offset):
        it = -1
        for it, idx in _epoch_batches(len(ds), config.batch_size, epochs, phase_seed):
            batch = [ds[i] for i in idx]
            imgs, bgs = [], []
            for s in batch:
                i, b = augment_noise(s.image, s.background, config.noise_sigma_max, aug_rng)
                imgs.append(i)
                bgs.append(b)
            graph = params.as_graph_tensors(trainable=trainable)
            coarse, refined = student_graph(params.arch, graph,
                                            np.stack(imgs), np.stack(bgs))
            labels = _stack(batch, "pseudo")
            if refine_loss:
                loss = base_loss_graph(refined, labels)
            else:
                loss = base_loss_graph(coarse, _downsample4(labels))
            iteration = it + it_offset
            lr = config.lr_at(iteration)
            _optimize(params, loss, graph, lr, iteration)
            log.append(iteration, lr, float(loss.data), 0.0, len(batch), 0)
        return it_offset + it + 1

    offset = run_phase(config.student_epochs_coarse, coarse_only, False,
                       config.seed + 1, 0)
    run_phase(config.student_epochs_joint, None, True, config.seed + 2, offset)
    return params


def finetune_student_direct(params: ParamSet, manifest: DatasetManifest,
                            config: TrainConfig, freeze_refiner: bool = True,
                            log: LossLog | None = None) -> ParamSet:
    """Ablation arm: hybrid scribble training of the student's coarse stage.

    The selective loss is applied at coarse resolution with majority-vote
    downsampled scribbles. With the refiner unfrozen, base samples also train
    the refiner through the full-resolution output.
    """
    base_ds = load_split(manifest, "base")
    scribble_ds = [s for s in load_split(manifest, "capture_stage") if s.scribbles is not None]
    if config.base_fraction < 1.0 and not scribble_ds:
        raise ValueError("no scribble-annotated capture-stage samples")
    _check_trainable(base_ds + scribble_ds, "finetune_student_direct")
    log = log or LossLog()
    params = params.copy()
    trainable = None
    if freeze_refiner:
        trainable = {k for k in params.tensors
                     if k.split(".")[0] not in STUDENT_REFINER_LAYERS}
    aug_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0x5F)))
    for it in range(config.iterations):
        base, scrib = sample_hybrid_batch(base_ds, scribble_ds, config, it)
        graph = params.as_graph_tensors(trainable=trainable)
        terms = []
        base_val = scrib_val = 0.0
        if base:
            imgs, bgs = [], []
            for s in base:
                i, b = augment_noise(s.image, s.background, config.noise_sigma_max, aug_rng)
                imgs.append(i)
                bgs.append(b)
            coarse, refined = student_graph(params.arch, graph, np.stack(imgs), np.stack(bgs))
            labels = _stack(base, "alpha")
            if freeze_refiner:
                loss_b = base_loss_graph(coarse, _downsample4(labels))
            else:
                loss_b = base_loss_graph(refined, labels)
            base_val = float(loss_b.data)
            terms.append(ad.scale(loss_b, len(base) / config.batch_size))
        if scrib:
            imgs = np.stack([s.image for s in scrib])
            bgs = np.stack([s.background for s in scrib])
            coarse, _ = student_graph(params.arch, graph, imgs, bgs)
            small = [downsample_scribbles(s.scribbles) for s in scrib]
            loss_s = scribble_loss_graph(coarse, small)
            scrib_val = float(loss_s.data) / len(scrib)
            terms.append(ad.scale(loss_s, 1.0 / config.batch_size))
        loss = terms[0]
        for t in terms[1:]:
            loss = ad.add(loss, t)
        lr = config.lr_at(it)
        _optimize(params, loss, graph, lr, it)
        log.append(it, lr, base_val, scrib_val, len(base), len(scrib))
    return params

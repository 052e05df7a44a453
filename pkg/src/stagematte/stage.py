"""Synthetic capture-stage scene generator with analytically known alpha.

Scenes are composed as I = a*F + (1-a)*(B + delta) + noise, where delta
models foreground-induced background alterations (soft shadows, reflections
in declared strips) and the noise term models the sensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import raster
from .filters import blur_radius, gaussian_blur
from .raster import AlphaMask, Image, ScribbleMap, composite


@dataclass
class StageEffects:
    shadow_strength: float = 0.0
    shadow_offset: tuple = (0, 0)  # (dx, dy) in pixels
    shadow_blur_sigma: float = 0.0
    reflection_strength: float = 0.0
    reflective_strips: list = field(default_factory=list)  # [(x0, x1), ...) column intervals
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.shadow_strength <= 1.0:
            raise ValueError("shadow_strength must be in [0, 1]")
        if not 0.0 <= self.reflection_strength <= 1.0:
            raise ValueError("reflection_strength must be in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")

    @classmethod
    def none(cls) -> "StageEffects":
        return cls()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shadow_offset"] = list(self.shadow_offset)
        d["reflective_strips"] = [list(s) for s in self.reflective_strips]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StageEffects":
        d = dict(d)
        d["shadow_offset"] = tuple(d.get("shadow_offset", (0, 0)))
        d["reflective_strips"] = [tuple(s) for s in d.get("reflective_strips", [])]
        return cls(**d)


@dataclass
class SceneSample:
    sample_id: str
    image: Image
    background: Image
    foreground: Image
    alpha_gt: AlphaMask
    effects: StageEffects
    seed: int


@dataclass
class FigureConfig:
    """Procedural figure: ellipse body, limb capsules, sub-pixel hair strands."""

    width: int = 64
    height: int = 64
    body_radius_frac: tuple = (0.26, 0.36)  # fraction of min(canvas dims)
    limb_count: tuple = (2, 4)
    limb_radius: tuple = (1.5, 3.0)
    strand_count: tuple = (12, 24)
    strand_width: float = 0.35  # radius in pixels, < 0.5 for fractional coverage
    strand_steps: int = 14


@dataclass
class BackgroundConfig:
    width: int = 64
    height: int = 64
    base_gray: tuple = (0.35, 0.5)
    disc_count: tuple = (1, 3)
    disc_brightness: tuple = (0.5, 1.0)
    disc_radius: tuple = (3.0, 8.0)
    strip_count: tuple = (1, 2)
    strip_width: tuple = (4, 8)
    strip_tint: float = 0.08


def _segment_distance(py, px, ay, ax, by, bx):
    """Distance from every grid point to the segment (a, b)."""
    vy, vx = by - ay, bx - ax
    denom = vy * vy + vx * vx
    if denom < 1e-12:
        return np.hypot(py - ay, px - ax)
    t = np.clip(((py - ay) * vy + (px - ax) * vx) / denom, 0.0, 1.0)
    return np.hypot(py - (ay + t * vy), px - (ax + t * vx))


def _capsule_alpha(dist: np.ndarray, radius: float) -> np.ndarray:
    # Signed-distance coverage: full inside, linear falloff across one pixel.
    return np.clip(radius - dist + 0.5, 0.0, 1.0)


def gen_foreground(seed: int, config: FigureConfig) -> tuple[Image, AlphaMask]:
    """Procedural figure with exact-coverage alpha; strands yield fractional values."""
    if config.width < 4 or config.height < 4:
        raise ValueError(f"degenerate canvas {config.width}x{config.height}")
    rng = np.random.default_rng(seed)
    h, w = config.height, config.width
    py, px = np.mgrid[0:h, 0:w].astype(np.float64)

    alpha = np.zeros((h, w))
    color = np.zeros((h, w, 3))

    scale = min(h, w)
    cy = rng.uniform(0.35, 0.55) * h
    cx = rng.uniform(0.35, 0.65) * w
    ry = rng.uniform(*config.body_radius_frac) * scale * rng.uniform(1.0, 1.4)
    rx = rng.uniform(*config.body_radius_frac) * scale
    body_color = rng.uniform(0.1, 0.9, size=3)

    # Ellipse body: approximate signed distance scaled back to pixels.
    norm = np.sqrt(((py - cy) / ry) ** 2 + ((px - cx) / rx) ** 2)
    body_a = np.clip((1.0 - norm) * min(rx, ry) + 0.5, 0.0, 1.0)
    alpha = np.maximum(alpha, body_a)
    color += body_a[:, :, None] * body_color

    n_limbs = rng.integers(config.limb_count[0], config.limb_count[1] + 1)
    for _ in range(n_limbs):
        ang = rng.uniform(0, 2 * np.pi)
        ay = cy + np.sin(ang) * ry * 0.8
        ax = cx + np.cos(ang) * rx * 0.8
        length = rng.uniform(0.15, 0.35) * scale
        by = np.clip(ay + np.sin(ang) * length, 1, h - 2)
        bx = np.clip(ax + np.cos(ang) * length, 1, w - 2)
        radius = rng.uniform(*config.limb_radius)
        limb_a = _capsule_alpha(_segment_distance(py, px, ay, ax, by, bx), radius)
        take = limb_a > alpha
        color[take] = limb_a[take, None] * body_color * 0.85
        alpha = np.maximum(alpha, limb_a)

    n_strands = rng.integers(config.strand_count[0], config.strand_count[1] + 1)
    strand_color = body_color * 0.5 + 0.25
    for _ in range(n_strands):
        sy = cy - ry * rng.uniform(0.7, 1.0)
        sx = cx + rng.uniform(-0.8, 0.8) * rx
        direction = rng.uniform(-2.4, -0.7)  # mostly upward
        strand_a = np.zeros((h, w))
        for _ in range(config.strand_steps):
            direction += rng.normal(0.0, 0.45)
            ny = sy + np.sin(direction) * 1.6
            nx = sx + np.cos(direction) * 1.6
            seg = _capsule_alpha(_segment_distance(py, px, sy, sx, ny, nx),
                                 config.strand_width)
            strand_a = np.maximum(strand_a, seg)
            sy, sx = ny, nx
        take = strand_a > alpha
        color[take] = strand_a[take, None] * strand_color
        alpha = np.maximum(alpha, strand_a)

    # Colors were accumulated premultiplied-ish; normalize where covered.
    covered = alpha > 1e-6
    color[covered] = np.clip(color[covered] / np.maximum(alpha[covered, None], 1e-6), 0, 1)
    color[~covered] = body_color
    return Image(color), AlphaMask(alpha)


def gen_background(seed: int, config: BackgroundConfig) -> tuple[Image, list]:
    """Stage panel: near-uniform gray, bright light discs, reflective strips.

    Returns the background image and the strip column intervals.
    """
    rng = np.random.default_rng(seed)
    h, w = config.height, config.width
    py, px = np.mgrid[0:h, 0:w].astype(np.float64)

    base = rng.uniform(*config.base_gray)
    bg = np.full((h, w, 3), base)
    bg += rng.uniform(-0.02, 0.02, size=3)  # slight tint

    n_discs = rng.integers(config.disc_count[0], config.disc_count[1] + 1)
    for _ in range(n_discs):
        dy, dx = rng.uniform(0, h), rng.uniform(0, w)
        radius = rng.uniform(*config.disc_radius)
        brightness = rng.uniform(*config.disc_brightness)
        falloff = np.clip(1.0 - np.hypot(py - dy, px - dx) / radius, 0.0, 1.0)
        bg += (brightness * falloff**0.5)[:, :, None]

    strips = []
    n_strips = rng.integers(config.strip_count[0], config.strip_count[1] + 1)
    for _ in range(n_strips):
        width = int(rng.integers(config.strip_width[0], config.strip_width[1] + 1))
        if width >= w:
            raise ValueError("reflective strip wider than canvas")
        x0 = int(rng.integers(0, w - width))
        strips.append((x0, x0 + width))
        bg[:, x0:x0 + width] += config.strip_tint
    return Image(bg), strips


def shadow_mask(alpha: AlphaMask, effects: StageEffects) -> np.ndarray:
    """Blurred, offset silhouette that modulates the shadow darkening."""
    dx, dy = effects.shadow_offset
    sil = np.zeros_like(alpha.data)
    h, w = sil.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    sil[ys, xs] = alpha.data[ys_src, xs_src]
    return gaussian_blur(sil, effects.shadow_blur_sigma)


def shadow_support(alpha: AlphaMask, effects: StageEffects) -> np.ndarray:
    """Boolean region where the shadow term can be nonzero (truncated blur support)."""
    mask = shadow_mask(alpha, effects) if effects.shadow_strength > 0 else None
    if mask is None:
        return np.zeros(alpha.data.shape, dtype=bool)
    return mask > 0


def apply_stage_effects(fg: Image, alpha: AlphaMask, bg: Image,
                        effects: StageEffects, seed: int) -> Image:
    """Corrupted composite: shadow darkening, strip reflections, sensor noise."""
    raster._check_same_size(fg, bg, "apply_stage_effects")
    raster._check_same_size(fg, alpha, "apply_stage_effects")
    h, w = alpha.height, alpha.width

    delta = np.zeros((h, w, 3))
    if effects.shadow_strength > 0:
        m = shadow_mask(alpha, effects)
        delta -= effects.shadow_strength * m[:, :, None] * bg.data
    if effects.reflection_strength > 0 and effects.reflective_strips:
        for x0, x1 in effects.reflective_strips:
            if not (0 <= x0 < x1 <= w):
                raise ValueError(f"strip ({x0}, {x1}) outside canvas of width {w}")
        mirrored = (fg.data * alpha.data[:, :, None])[:, ::-1]
        strip_sel = np.zeros(w, dtype=bool)
        for x0, x1 in effects.reflective_strips:
            strip_sel[x0:x1] = True
        delta[:, strip_sel] += effects.reflection_strength * mirrored[:, strip_sel]

    a = alpha.data[:, :, None]
    out = a * fg.data + (1.0 - a) * (bg.data + delta)
    if effects.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, effects.noise_sigma, size=out.shape)
    return Image(out)


# --------------------------------------------------------------------------
# Dataset generation

ROLES = ("base", "capture_stage", "unlabeled", "validation")


@dataclass
class ManifestRecord:
    sample_id: str
    role: str
    image: str
    background: str
    seed: int
    alpha_gt: str | None = None
    scribbles: str | None = None
    pseudo_label: str | None = None

    def to_dict(self) -> dict:
        d = {"id": self.sample_id, "role": self.role, "image": self.image,
             "background": self.background, "seed": self.seed}
        for key in ("alpha_gt", "scribbles", "pseudo_label"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        return cls(sample_id=d["id"], role=d["role"], image=d["image"],
                   background=d["background"], seed=d["seed"],
                   alpha_gt=d.get("alpha_gt"), scribbles=d.get("scribbles"),
                   pseudo_label=d.get("pseudo_label"))


class DatasetManifest:
    """Line-delimited JSON manifest; file paths are relative to its directory."""

    def __init__(self, records: list, root: Path | None = None):
        ids = [r.sample_id for r in records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids in manifest")
        for r in records:
            if r.role not in ROLES:
                raise ValueError(f"unknown role {r.role!r} for sample {r.sample_id}")
        self.records = records
        self.root = Path(root) if root is not None else Path(".")

    def split(self, role: str) -> list:
        return [r for r in self.records if r.role == role]

    def by_id(self, sample_id: str) -> ManifestRecord:
        for r in self.records:
            if r.sample_id == sample_id:
                return r
        raise KeyError(sample_id)

    def resolve(self, relpath: str) -> Path:
        return self.root / relpath

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w") as f:
            for r in self.records:
                f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, check_files: bool = True) -> "DatasetManifest":
        path = Path(path)
        records = []
        with path.open() as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(ManifestRecord.from_dict(json.loads(line)))
        manifest = cls(records, root=path.parent)
        if check_files:
            for r in records:
                for rel in (r.image, r.background, r.alpha_gt, r.scribbles, r.pseudo_label):
                    if rel is not None and not manifest.resolve(rel).exists():
                        raise FileNotFoundError(f"manifest references missing file: {rel}")
        return manifest


@dataclass
class DatasetConfig:
    width: int = 64
    height: int = 64
    counts: dict = field(default_factory=lambda: {
        "base": 64, "capture_stage": 12, "unlabeled": 40, "validation": 16})
    figure: FigureConfig = None
    background: BackgroundConfig = None
    shadow_strength: tuple = (0.3, 0.6)
    shadow_blur_sigma: tuple = (1.0, 2.5)
    shadow_offset: tuple = (2, 6)  # magnitude range, direction randomized
    reflection_strength: tuple = (0.4, 0.8)
    noise_sigma: tuple = (0.01, 0.05)
    scribble_points: int = 60
    scribble_radius: int = 2

    def __post_init__(self):
        if self.figure is None:
            self.figure = FigureConfig(width=self.width, height=self.height)
        if self.background is None:
            self.background = BackgroundConfig(width=self.width, height=self.height)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        fig = d.pop("figure", None)
        bg = d.pop("background", None)
        for key in ("shadow_strength", "shadow_blur_sigma", "shadow_offset",
                    "reflection_strength", "noise_sigma"):
            if key in d:
                d[key] = tuple(d[key])
        cfg = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        if fig:
            fig = {k: tuple(v) if isinstance(v, list) else v for k, v in fig.items()}
            cfg.figure = FigureConfig(**fig)
        if bg:
            bg = {k: tuple(v) if isinstance(v, list) else v for k, v in bg.items()}
            cfg.background = BackgroundConfig(**bg)
        return cfg


def _sample_effects(rng: np.random.Generator, config: DatasetConfig,
                    strips: list, role: str) -> StageEffects:
    if role == "base":
        return StageEffects.none()
    off_mag = rng.integers(config.shadow_offset[0], config.shadow_offset[1] + 1)
    dx = int(off_mag) * (1 if rng.random() < 0.5 else -1)
    dy = int(rng.integers(1, config.shadow_offset[1] + 1))
    return StageEffects(
        shadow_strength=float(rng.uniform(*config.shadow_strength)),
        shadow_offset=(dx, dy),
        shadow_blur_sigma=float(rng.uniform(*config.shadow_blur_sigma)),
        reflection_strength=float(rng.uniform(*config.reflection_strength)),
        reflective_strips=strips,
        noise_sigma=float(rng.uniform(*config.noise_sigma)),
    )


def generate_scene(sample_id: str, seed: int, config: DatasetConfig, role: str) -> SceneSample:
    """One fully reproducible scene for the given role."""
    seq = np.random.SeedSequence(seed)
    s_fig, s_bg, s_fx, s_noise = (int(s.generate_state(1)[0]) for s in seq.spawn(4))
    fg, alpha = gen_foreground(s_fig, config.figure)
    bg, strips = gen_background(s_bg, config.background)
    effects = _sample_effects(np.random.default_rng(s_fx), config, strips, role)
    image = apply_stage_effects(fg, alpha, bg, effects, s_noise)
    return SceneSample(sample_id=sample_id, image=image, background=bg,
                       foreground=fg, alpha_gt=alpha, effects=effects, seed=seed)


def auto_scribbles(sample: SceneSample, rng: np.random.Generator,
                   n_points: int = 60, radius: int = 2) -> ScribbleMap:
    """Synthetic stand-in for user annotation of failure regions.

    Background strokes concentrate on shadowed and reflective areas (where
    background-conditioned matting tends to fail); foreground strokes mark
    the solid interior of the figure.
    """
    alpha = sample.alpha_gt.data
    h, w = alpha.shape
    fg_definite = alpha > 0.999
    bg_definite = alpha < 0.001

    err = np.zeros((h, w), dtype=bool)
    if sample.effects.shadow_strength > 0:
        err |= shadow_mask(sample.alpha_gt, sample.effects) > 0.15
    for x0, x1 in sample.effects.reflective_strips:
        err[:, x0:x1] = True
    err &= bg_definite

    labels = np.full((h, w), raster.SCRIBBLE_UNLABELED, dtype=np.uint8)
    py, px = np.mgrid[0:h, 0:w]

    def paint(region: np.ndarray, value: int, count: int):
        ys, xs = np.nonzero(region)
        if len(ys) == 0:
            return
        picks = rng.choice(len(ys), size=min(count, len(ys)), replace=False)
        for k in picks:
            disk = (py - ys[k]) ** 2 + (px - xs[k]) ** 2 <= radius**2
            labels[disk & region] = value

    # Annotation marks failure regions only: background strokes over shadows
    # and reflections, plus at most one confirming foreground dot.
    paint(err, raster.SCRIBBLE_BACKGROUND, n_points // 2)
    paint(fg_definite, raster.SCRIBBLE_FOREGROUND, 1)
    return ScribbleMap(labels)


def gen_dataset(config: DatasetConfig, seed: int, out_dir) -> DatasetManifest:
    """Generate all splits, write PNGs and the manifest; reproducible from (config, seed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sub in ("images", "backgrounds", "alphas", "scribbles"):
        (out_dir / sub).mkdir(exist_ok=True)

    records = []
    index = 0
    for role in ROLES:
        for j in range(config.counts.get(role, 0)):
            sample_id = f"{role}_{j:04d}"
            sample_seed = int(np.random.SeedSequence((seed, index)).generate_state(1)[0])
            sample = generate_scene(sample_id, sample_seed, config, role)

            image_rel = f"images/{sample_id}.png"
            bg_rel = f"backgrounds/{sample_id}.png"
            raster.save_png(sample.image, out_dir / image_rel)
            raster.save_png(sample.background, out_dir / bg_rel)
            record = ManifestRecord(sample_id=sample_id, role=role, image=image_rel,
                                    background=bg_rel, seed=sample_seed)
            if role in ("base", "validation"):
                alpha_rel = f"alphas/{sample_id}.png"
                raster.save_png(sample.alpha_gt, out_dir / alpha_rel)
                record.alpha_gt = alpha_rel
            if role == "capture_stage":
                scribble_rng = np.random.default_rng(
                    np.random.SeedSequence((seed, index, 1)).generate_state(1)[0])
                scribbles = auto_scribbles(sample, scribble_rng,
                                           config.scribble_points, config.scribble_radius)
                scrib_rel = f"scribbles/{sample_id}.png"
                raster.save_png(scribbles, out_dir / scrib_rel)
                record.scribbles = scrib_rel
            records.append(record)
            index += 1

    manifest = DatasetManifest(records, root=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest

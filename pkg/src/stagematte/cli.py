"""Command-line pipeline: data generation, training, distillation, QC, serving."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics as metrics_mod
from . import raster
from .config import PipelineConfig
from .nets import (default_student_arch, default_teacher_arch, forward_student,
                   forward_teacher, init_params, load_checkpoint, save_checkpoint)
from .stage import DatasetManifest, gen_dataset
from .supervisor import qc_validate, supervise_solve, trimap_from_alpha
from .training import (LossLog, TrainConfig, distill_labels, finetune_student,
                       finetune_student_direct, finetune_teacher, load_split,
                       train_teacher_base)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class DataError(Exception):
    pass


def _workspace_override(path: Path) -> Path:
    env = os.environ.get("STAGEMATTE_WORKSPACE")
    return Path(env) if env else path


def _load_config(config_path) -> PipelineConfig:
    cfg = PipelineConfig.load(config_path)
    cfg.workspace = _workspace_override(cfg.workspace)
    return cfg


def _refuse_existing(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise DataError(f"output {path} exists; pass --force to overwrite")


def _manifest(cfg: PipelineConfig) -> DatasetManifest:
    path = cfg.workspace / "manifest.jsonl"
    if not path.exists():
        raise DataError(f"no manifest at {path}; run gen-data first")
    return DatasetManifest.load(path)


def _train_cfg(base: TrainConfig, iterations, seed, base_fraction) -> TrainConfig:
    d = dict(base.__dict__)
    if iterations is not None:
        d["iterations"] = iterations
    if seed is not None:
        d["seed"] = seed
    if base_fraction is not None:
        d["base_fraction"] = base_fraction
    return TrainConfig(**d)


@click.group()
def cli():
    """Capture-stage matting pipeline."""


config_opt = click.option("--config", "config_path", required=True,
                          type=click.Path(exists=True, dir_okay=False))
force_opt = click.option("--force", is_flag=True, default=False)
iter_opt = click.option("--iterations", type=int, default=None)
seed_opt = click.option("--seed", type=int, default=None)


@cli.command("gen-data")
@config_opt
@seed_opt
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@force_opt
def cmd_gen_data(config_path, seed, out_dir, force):
    """Generate the synthetic dataset and manifest."""
    cfg = _load_config(config_path)
    out = Path(out_dir) if out_dir else cfg.workspace
    _refuse_existing(out / "manifest.jsonl", force)
    manifest = gen_dataset(cfg.dataset, seed if seed is not None else cfg.seed, out)
    click.echo(f"wrote {len(manifest.records)} samples to {out}")


@cli.command("train-base")
@config_opt
@iter_opt
@seed_opt
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@force_opt
def cmd_train_base(config_path, iterations, seed, out_path, force):
    """Train the teacher from scratch on the clean base split."""
    cfg = _load_config(config_path)
    out = Path(out_path) if out_path else cfg.workspace / "checkpoints/teacher_base.ckpt"
    _refuse_existing(out, force)
    tc = _train_cfg(cfg.train_base, iterations, seed, None)
    params = init_params(default_teacher_arch(), tc.seed)
    log = LossLog(out.with_suffix(".log"))
    params = train_teacher_base(_manifest(cfg), tc, params, log)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out)
    click.echo(f"teacher base checkpoint: {out}")


@cli.command("finetune-teacher")
@config_opt
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@iter_opt
@seed_opt
@click.option("--base-fraction", type=float, default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@force_opt
def cmd_finetune_teacher(config_path, ckpt, iterations, seed, base_fraction, out_path, force):
    """Hybrid fine-tuning on base data plus scribbled capture-stage samples."""
    cfg = _load_config(config_path)
    out = Path(out_path) if out_path else cfg.workspace / "checkpoints/teacher_refined.ckpt"
    _refuse_existing(out, force)
    tc = _train_cfg(cfg.finetune, iterations, seed, base_fraction)
    log = LossLog(out.with_suffix(".log"))
    params = finetune_teacher(load_checkpoint(ckpt), _manifest(cfg), tc, log)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out)
    click.echo(f"refined teacher checkpoint: {out}")


@cli.command("distill")
@config_opt
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
def cmd_distill(config_path, ckpt):
    """Write teacher pseudo labels for the unlabeled split."""
    cfg = _load_config(config_path)
    manifest = distill_labels(load_checkpoint(ckpt), _manifest(cfg))
    n = sum(1 for r in manifest.records if r.pseudo_label)
    click.echo(f"pseudo-labeled {n} samples")


@cli.command("finetune-student")
@config_opt
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@seed_opt
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@force_opt
def cmd_finetune_student(config_path, ckpt, seed, out_path, force):
    """Two-phase student fit to teacher pseudo labels."""
    cfg = _load_config(config_path)
    out = Path(out_path) if out_path else cfg.workspace / "checkpoints/student_distilled.ckpt"
    _refuse_existing(out, force)
    tc = _train_cfg(cfg.student, None, seed, None)
    log = LossLog(out.with_suffix(".log"))
    params = finetune_student(load_checkpoint(ckpt), _manifest(cfg), tc, log)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out)
    click.echo(f"distilled student checkpoint: {out}")


@cli.command("finetune-student-direct")
@config_opt
@click.option("--checkpoint", "ckpt", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Starting student checkpoint; default is a fresh initialization.")
@iter_opt
@seed_opt
@click.option("--base-fraction", type=float, default=None)
@click.option("--freeze-refiner/--no-freeze-refiner", default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@force_opt
def cmd_finetune_student_direct(config_path, ckpt, iterations, seed, base_fraction,
                                freeze_refiner, out_path, force):
    """Ablation: train the student directly on the hybrid scribble dataset."""
    cfg = _load_config(config_path)
    out = Path(out_path) if out_path else cfg.workspace / "checkpoints/student_direct.ckpt"
    _refuse_existing(out, force)
    tc = _train_cfg(cfg.student, iterations, seed, base_fraction)
    params = load_checkpoint(ckpt) if ckpt else init_params(default_student_arch(), tc.seed)
    log = LossLog(out.with_suffix(".log"))
    params = finetune_student_direct(params, _manifest(cfg), tc, freeze_refiner, log)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out)
    click.echo(f"direct student checkpoint: {out}")


def _predict_split(cfg, ckpt, split):
    params = load_checkpoint(ckpt)
    manifest = _manifest(cfg)
    outputs = {}
    for rec in manifest.split(split):
        image = raster.load_image(manifest.resolve(rec.image))
        background = raster.load_image(manifest.resolve(rec.background))
        if params.arch.role == "teacher":
            mask = forward_teacher(params, image, background)
        else:
            mask = forward_student(params, image, background)[1]
        outputs[rec.sample_id] = mask
    return outputs


@cli.command("predict")
@config_opt
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@force_opt
def cmd_predict(config_path, ckpt, split, out_dir, force):
    """Write alpha predictions for a split as PNGs."""
    cfg = _load_config(config_path)
    out = Path(out_dir)
    preds = _predict_split(cfg, ckpt, split)
    if not preds:
        raise DataError(f"split {split!r} is empty")
    out.mkdir(parents=True, exist_ok=True)
    for sample_id, mask in preds.items():
        path = out / f"{sample_id}.png"
        _refuse_existing(path, force)
        raster.save_png(mask, path)
    click.echo(f"wrote {len(preds)} predictions to {out}")


@cli.command("export-review")
@config_opt
@click.option("--split", required=True)
@click.option("--pred", "pred_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@force_opt
def cmd_export_review(config_path, split, pred_dir, out_dir, force):
    """Side-by-side image / prediction / background sheets for failure triage."""
    cfg = _load_config(config_path)
    manifest = _manifest(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = manifest.split(split)
    if not records:
        raise DataError(f"split {split!r} is empty")
    for rec in records:
        image = raster.load_image(manifest.resolve(rec.image))
        background = raster.load_image(manifest.resolve(rec.background))
        panels = [image.data]
        if pred_dir:
            pred_path = Path(pred_dir) / f"{rec.sample_id}.png"
            if pred_path.exists():
                pred = raster.load_alpha(pred_path).data
                panels.append(np.repeat(pred[:, :, None], 3, axis=2))
        panels.append(background.data)
        sheet = raster.Image(np.concatenate(panels, axis=1))
        path = out / f"{rec.sample_id}.png"
        _refuse_existing(path, force)
        raster.save_png(sheet, path)
    click.echo(f"wrote {len(records)} review sheets to {out}")


def _load_predictions(pred_dir, ids):
    preds = {}
    for sample_id in ids:
        path = Path(pred_dir) / f"{sample_id}.png"
        if not path.exists():
            raise DataError(f"missing prediction {path}")
        preds[sample_id] = raster.load_alpha(path)
    return preds


def _split_truths(manifest, split):
    truths = {}
    for rec in manifest.split(split):
        if not rec.alpha_gt:
            raise DataError(f"sample {rec.sample_id} has no ground truth")
        truths[rec.sample_id] = raster.load_alpha(manifest.resolve(rec.alpha_gt))
    return truths


@cli.command("eval")
@config_opt
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--split", required=True)
@click.option("--band", type=int, default=None, help="Restrict metrics to a trimap band.")
@click.option("--out", "out_json", type=click.Path(dir_okay=False), default=None)
def cmd_eval(config_path, pred_dir, split, band, out_json):
    """Metric report (MSE / SAD / Grad) for predictions against ground truth."""
    cfg = _load_config(config_path)
    manifest = _manifest(cfg)
    truths = _split_truths(manifest, split)
    preds = _load_predictions(pred_dir, truths)
    regions = None
    if band is not None:
        regions = {sid: trimap_from_alpha(t, band).unknown for sid, t in truths.items()}
    report = metrics_mod.evaluate_dataset(preds, truths, regions)
    click.echo(report.format_table(label=split))
    if out_json:
        Path(out_json).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


@cli.command("qc")
@config_opt
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--split", default="validation")
@click.option("--out", "out_json", type=click.Path(dir_okay=False), default=None)
def cmd_qc(config_path, pred_dir, split, out_json):
    """Supervisor-based QC: trimap solve vs candidate predictions on the band."""
    cfg = _load_config(config_path)
    manifest = _manifest(cfg)
    truths = _split_truths(manifest, split)
    preds = _load_predictions(pred_dir, truths)
    trimaps, solves = {}, {}
    for rec in manifest.split(split):
        image = raster.load_image(manifest.resolve(rec.image))
        trimap = trimap_from_alpha(truths[rec.sample_id], cfg.qc_band_radius)
        trimaps[rec.sample_id] = trimap
        solves[rec.sample_id] = supervise_solve(image, trimap)
    report = qc_validate(preds, solves, trimaps, cfg.qc_thresholds, cfg.qc_band_radius)
    click.echo(report.format_table())
    if out_json:
        Path(out_json).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if not report.all_passed:
        click.echo("qc: some samples failed their thresholds")


@cli.command("ratio-sweep")
@config_opt
@click.option("--checkpoint", "ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--values", default="0.0,0.2,0.4,0.6,0.8,1.0")
@iter_opt
@seed_opt
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def cmd_ratio_sweep(config_path, ckpt, values, iterations, seed, out_path):
    """Fine-tune at several base fractions and tabulate validation MSE."""
    cfg = _load_config(config_path)
    manifest = _manifest(cfg)
    truths = _split_truths(manifest, "validation")
    base_params = load_checkpoint(ckpt)
    rows = []
    for value in values.split(","):
        p = float(value)
        tc = _train_cfg(cfg.finetune, iterations, seed, p)
        params = finetune_teacher(base_params, manifest, tc)
        preds = {}
        for rec in manifest.split("validation"):
            image = raster.load_image(manifest.resolve(rec.image))
            background = raster.load_image(manifest.resolve(rec.background))
            preds[rec.sample_id] = forward_teacher(params, image, background)
        report = metrics_mod.evaluate_dataset(preds, truths)
        rows.append((p, report.mse, report.sad))
    lines = [f"{'base_fraction':>14}{'MSE*1e4':>12}{'SAD*1e3':>12}"]
    for p, m, s in rows:
        lines.append(f"{p:>14.2f}{m * 1e4:>12.3f}{s * 1e3:>12.3f}")
    table = "\n".join(lines)
    click.echo(table)
    if out_path:
        Path(out_path).write_text(table + "\n")


@cli.command("serve")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--port", type=int, default=8008)
@click.option("--pred", "pred_dir", type=click.Path(file_okay=False), default=None)
@click.option("--static", "static_dir", type=click.Path(file_okay=False), default=None)
def cmd_serve(manifest_path, port, pred_dir, static_dir):
    """Run the annotation API (and static frontend, if built)."""
    import uvicorn

    from .server import create_app
    app = create_app(manifest_path, pred_dir, static_dir)
    uvicorn.run(app, host="127.0.0.1", port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError, KeyError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except FloatingPointError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())

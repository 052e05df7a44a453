"""Pipeline configuration file (YAML)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .stage import DatasetConfig
from .supervisor import QCThresholds
from .training import TrainConfig


@dataclass
class PipelineConfig:
    workspace: Path = Path("workspace")
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train_base: TrainConfig = field(default_factory=TrainConfig.for_base_training)
    finetune: TrainConfig = field(default_factory=TrainConfig)
    student: TrainConfig = field(default_factory=TrainConfig)
    qc_band_radius: int = 2
    qc_thresholds: QCThresholds = field(default_factory=QCThresholds)
    server_port: int = 8008

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        raw = yaml.safe_load(path.read_text()) or {}
        cfg = cls()
        if "workspace" in raw:
            cfg.workspace = Path(raw["workspace"])
            if not cfg.workspace.is_absolute():
                cfg.workspace = path.parent / cfg.workspace
        cfg.seed = raw.get("seed", cfg.seed)
        if "dataset" in raw:
            cfg.dataset = DatasetConfig.from_dict(raw["dataset"])
        for name in ("train_base", "finetune", "student"):
            if name in raw:
                base = getattr(cfg, name)
                merged = {**base.__dict__, **raw[name]}
                setattr(cfg, name, TrainConfig(**merged))
        qc = raw.get("qc", {})
        cfg.qc_band_radius = qc.get("band_radius", cfg.qc_band_radius)
        if "thresholds" in qc:
            cfg.qc_thresholds = QCThresholds(**qc["thresholds"])
        cfg.server_port = raw.get("server", {}).get("port", cfg.server_port)
        return cfg

"""Experiment configuration: which models to train, on which data, where.

The shipped default is a 7-model ensemble over three audio feature sources:

    tag     loss   gamma  weights  audio source
    model1  focal  2.0    prior    whisper
    model2  focal  2.5    prior    whisper
    model3  ce     -      prior    whisper
    model4  focal  2.0    uniform  whisper
    model5  ce     -      uniform  whisper
    model6  focal  2.0    prior    wavlm
    model7  focal  3.0    prior    hubert

Audio source tags map to distinct synthetic feature spaces (generator
variant + dim) so that ensemble diversity is exercised without any real
feature extractors.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import (
    DEFAULT_CLASS_NAMES,
    SyntheticSpec,
    count_labels,
    load_manifest,
    load_utterances,
)
from .losses import LossConfig, prior_weights, uniform_weights
from .model import FUSION_KINDS, Model, ModelConfig, load_checkpoint
from .training import SchedulerConfig, TrainConfig, train, evaluate
from .ensemble import write_records

# audio feature source tag -> synthetic stand-in (generator variant, feature dim)
AUDIO_SOURCES = {
    "whisper": {"variant": 0, "dim": 32},
    "wavlm": {"variant": 1, "dim": 28},
    "hubert": {"variant": 2, "dim": 36},
}


@dataclass(frozen=True)
class ModelSpec:
    """One ensemble member: loss configuration plus audio feature source."""

    tag: str
    loss_kind: str = "ce"        # "ce" | "focal"
    gamma: float = 0.0
    weight_scheme: str = "uniform"  # "uniform" | "prior"
    audio_source: str = "whisper"
    fusion: str = "early"

    def __post_init__(self):
        if self.loss_kind not in ("ce", "focal"):
            raise ValueError(f"{self.tag}: unknown loss kind {self.loss_kind!r}")
        if self.weight_scheme not in ("uniform", "prior"):
            raise ValueError(f"{self.tag}: unknown weight scheme {self.weight_scheme!r}")
        if self.audio_source not in AUDIO_SOURCES:
            raise ValueError(f"{self.tag}: unknown audio source {self.audio_source!r} "
                             f"(known: {sorted(AUDIO_SOURCES)})")
        if self.fusion not in FUSION_KINDS:
            raise ValueError(f"{self.tag}: unknown fusion {self.fusion!r}")
        if self.gamma < 0:
            raise ValueError(f"{self.tag}: gamma must be >= 0")

    def to_dict(self) -> dict:
        return {"tag": self.tag, "loss": self.loss_kind, "gamma": self.gamma,
                "weights": self.weight_scheme, "audio": self.audio_source,
                "fusion": self.fusion}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tag=d["tag"], loss_kind=d.get("loss", "ce"),
                   gamma=float(d.get("gamma", 0.0)),
                   weight_scheme=d.get("weights", "uniform"),
                   audio_source=d.get("audio", "whisper"),
                   fusion=d.get("fusion", "early"))


def default_models() -> tuple[ModelSpec, ...]:
    return (
        ModelSpec("model1", "focal", 2.0, "prior", "whisper"),
        ModelSpec("model2", "focal", 2.5, "prior", "whisper"),
        ModelSpec("model3", "ce", 0.0, "prior", "whisper"),
        ModelSpec("model4", "focal", 2.0, "uniform", "whisper"),
        ModelSpec("model5", "ce", 0.0, "uniform", "whisper"),
        ModelSpec("model6", "focal", 2.0, "prior", "wavlm"),
        ModelSpec("model7", "focal", 3.0, "prior", "hubert"),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs, 1:1 with the config file."""

    models: tuple[ModelSpec, ...] = field(default_factory=default_models)
    data_dir: str = "data"
    out_dir: str = "runs"
    hidden: int = 512
    n_transformer_layers: int = 2
    n_classes: int = 8
    lmf_rank: int = 4
    batch_size: int = 128
    initial_lr: float = 1e-4
    max_epochs: int = 20
    scheduler_factor: float = 0.5
    scheduler_patience: int = 1
    seed: int = 0

    def __post_init__(self):
        tags = [m.tag for m in self.models]
        if len(tags) != len(set(tags)):
            dupes = sorted({t for t in tags if tags.count(t) > 1})
            raise ValueError(f"model tags must be unique; duplicated: {dupes}")
        if not self.models:
            raise ValueError("experiment needs >= 1 model spec")

    def spec_for(self, tag: str) -> ModelSpec:
        for m in self.models:
            if m.tag == tag:
                return m
        raise KeyError(f"no model spec tagged {tag!r} "
                       f"(available: {[m.tag for m in self.models]})")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "models"}
        d["models"] = [m.to_dict() for m in self.models]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment-config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "models" in kwargs:
            kwargs["models"] = tuple(ModelSpec.from_dict(m) for m in kwargs["models"])
        for f in ("initial_lr", "scheduler_factor"):
            if f in kwargs:
                kwargs[f] = float(kwargs[f])
        return cls(**kwargs)


def load_experiment_config(path) -> ExperimentConfig:
    """Read a YAML or JSON experiment config file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        raw = json.loads(text)
    else:
        import yaml
        raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config root must be a mapping")
    return ExperimentConfig.from_dict(raw)


def load_synthetic_spec(path) -> SyntheticSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"synthetic spec file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        raw = json.loads(text)
    else:
        import yaml
        raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: spec root must be a mapping")
    return SyntheticSpec.from_dict(raw)


def model_seed(base_seed: int, tag: str) -> int:
    """Distinct, stable per-model seed."""
    return (base_seed * 1000003 + zlib.crc32(tag.encode())) % (2 ** 31)


@dataclass(frozen=True)
class RunResult:
    tag: str
    checkpoint_path: Path
    report_path: Path
    predictions_path: Path
    dev_macro_f1: float
    dev_wa: float
    dev_ua: float


def run_model(cfg: ExperimentConfig, spec: ModelSpec, data_dir=None, out_dir=None,
              seed: int | None = None) -> RunResult:
    """Train one ensemble member end to end and persist its artifacts.

    Writes <out>/<tag>/checkpoint.bin, report.json, log.jsonl and
    predictions.jsonl (dev-set records of the best checkpoint).
    """
    data_dir = Path(data_dir if data_dir is not None else cfg.data_dir)
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    base_seed = cfg.seed if seed is None else seed
    source_dir = data_dir / spec.audio_source
    train_entries = load_manifest(source_dir / "train.tsv")
    dev_entries = load_manifest(source_dir / "dev.tsv")
    train_set = load_utterances(train_entries)
    dev_set = load_utterances(dev_entries)

    if spec.weight_scheme == "prior":
        weights = prior_weights(count_labels(train_entries, cfg.n_classes))
    else:
        weights = uniform_weights(cfg.n_classes)
    loss = LossConfig(kind=spec.loss_kind, gamma=spec.gamma, class_weights=weights)

    mseed = model_seed(base_seed, spec.tag)
    model_cfg = ModelConfig(
        audio_dim=train_set[0].audio.shape[1], text_dim=train_set[0].text.shape[1],
        hidden=cfg.hidden, n_transformer_layers=cfg.n_transformer_layers,
        n_classes=cfg.n_classes, fusion=spec.fusion, lmf_rank=cfg.lmf_rank, seed=mseed)
    train_cfg = TrainConfig(
        batch_size=cfg.batch_size, initial_lr=cfg.initial_lr, max_epochs=cfg.max_epochs,
        scheduler=SchedulerConfig(factor=cfg.scheduler_factor,
                                  patience=cfg.scheduler_patience),
        loss=loss, seed=mseed)

    tag_dir = out_dir / spec.tag
    tag_dir.mkdir(parents=True, exist_ok=True)
    ckpt = tag_dir / "checkpoint.bin"
    report = train(Model(model_cfg), train_set, dev_set, train_cfg, ckpt,
                   log_path=tag_dir / "log.jsonl")
    report.save(tag_dir / "report.json")

    best = load_checkpoint(ckpt)
    records, bundle = evaluate(best, dev_set, cfg.batch_size, model_tag=spec.tag)
    write_records(tag_dir / "predictions.jsonl", records)
    return RunResult(tag=spec.tag, checkpoint_path=ckpt,
                     report_path=tag_dir / "report.json",
                     predictions_path=tag_dir / "predictions.jsonl",
                     dev_macro_f1=bundle.macro_f1, dev_wa=bundle.wa, dev_ua=bundle.ua)

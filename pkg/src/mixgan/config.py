"""Run configuration documents and built-in presets.

A run config is one JSON object::

    {
      "output_dir": "runs/quick",
      "seed": 0,
      "threads": 1,
      "content": {DatasetSpec fields},
      "style": {DatasetSpec fields},
      "arch": {ArchSpec fields},
      "train_content": {TrainConfig fields except stage},
      "train_mixture": {TrainConfig fields except stage},
      "eval": {EvalSettings fields}
    }

Every section is optional when a preset supplies it. Unknown keys are
rejected at every level. Precedence is flags > config file > preset >
defaults; the run seed overrides the seeds inside both training sections.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import DatasetSpec
from .exceptions import ArgumentError, ConfigError
from .nets import ArchSpec
from .train import TrainConfig

_DATASET_KEYS = {f.name for f in fields(DatasetSpec)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"stage"}
_ARCH_KEYS = {f.name for f in fields(ArchSpec)}


@dataclass(frozen=True)
class EvalSettings:
    n_samples: int = 500
    n_grid: int = 64
    classifier_epochs: int = 6
    shape_classifier_epochs: int = 20
    confidence: float = 0.8

    def __post_init__(self):
        for name in ("n_samples", "n_grid", "classifier_epochs", "shape_classifier_epochs"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"eval.{name} must be >= 1")
        if not 0 < self.confidence <= 1:
            raise ArgumentError("eval.confidence must lie in (0, 1]")


_EVAL_KEYS = {f.name for f in fields(EvalSettings)}
_TOP_KEYS = {"output_dir", "seed", "threads", "content", "style", "arch", "train_content", "train_mixture", "eval"}


@dataclass
class RunConfig:
    output_dir: str = "runs/default"
    seed: int = 0
    threads: int = 1
    content: dict = field(default_factory=dict)
    style: dict = field(default_factory=dict)
    arch: ArchSpec = field(default_factory=ArchSpec)
    train_content: TrainConfig = field(default_factory=lambda: TrainConfig(stage="content"))
    train_mixture: TrainConfig = field(default_factory=lambda: TrainConfig(stage="mixture"))
    eval: EvalSettings = field(default_factory=EvalSettings)

    @classmethod
    def from_dict(cls, doc) -> "RunConfig":
        """Validate a config document; any problem raises :class:`ConfigError`."""
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(doc, _TOP_KEYS, "config")
        for section, keys in (("content", _DATASET_KEYS), ("style", _DATASET_KEYS), ("arch", _ARCH_KEYS),
                              ("train_content", _TRAIN_KEYS), ("train_mixture", _TRAIN_KEYS), ("eval", _EVAL_KEYS)):
            value = doc.get(section, {})
            if not isinstance(value, dict):
                raise ConfigError(f"{section} must be an object")
            _reject_unknown(value, keys, section)
        for name in ("content", "style"):
            source = doc.get(name, {}).get("source")
            if source not in DatasetSpec.SOURCES:
                raise ConfigError(f"{name}.source must be one of {DatasetSpec.SOURCES}, got {source!r}")
        seed = doc.get("seed", 0)
        threads = doc.get("threads", 1)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        if not isinstance(threads, int) or isinstance(threads, bool) or threads < 1:
            raise ConfigError(f"threads must be a positive integer, got {threads!r}")
        try:
            return cls(
                output_dir=str(doc.get("output_dir", cls.output_dir)),
                seed=seed,
                threads=threads,
                content={"domain": "content", **doc["content"]},
                style={"domain": "style", **doc["style"]},
                arch=ArchSpec(**doc.get("arch", {})),
                train_content=TrainConfig(stage="content", **{**doc.get("train_content", {}), "seed": seed}),
                train_mixture=TrainConfig(stage="mixture", **{**doc.get("train_mixture", {}), "seed": seed}),
                eval=EvalSettings(**doc.get("eval", {})),
            )
        except (ArgumentError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {
            "output_dir": self.output_dir,
            "seed": self.seed,
            "threads": self.threads,
            "content": dict(self.content),
            "style": dict(self.style),
            "arch": self.arch.to_dict(),
            "train_content": self.train_content.to_dict(),
            "train_mixture": self.train_mixture.to_dict(),
            "eval": asdict(self.eval),
        }
        for key in ("train_content", "train_mixture"):
            out[key].pop("stage")
        return out

    def dataset(self, name) -> DatasetSpec:
        """Build the :class:`DatasetSpec` for ``content`` or ``style`` (may raise on missing paths)."""
        return DatasetSpec(**getattr(self, name))


def _reject_unknown(doc, allowed, where):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; values in ``override`` win, nested objects merge."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# 16 px glyph corpora with tiny nets. The mixture stage runs at a reduced
# learning rate for a fixed 50 epochs: at this scale the patch critic
# eventually learns the style glyph outlines and pulls samples off the
# content shapes, so longer schedules trade content for style.
SYNTH_QUICK = {
    "output_dir": "runs/synth-quick",
    "content": {"source": "synthetic_shapes", "seed": 1, "n": 2000, "target_size": 16},
    "style": {"source": "synthetic_styled", "seed": 2, "n": 2000, "target_size": 16},
    "arch": {
        "image_size": 16, "latent_dim": 8, "base_width": 16, "fc_widths": [128, 256],
        "latent_disc_width": 128, "patch_width": 64, "patch_layers": 1, "fusion": "add",
    },
    "train_content": {"epochs": 60},
    "train_mixture": {"epochs": 50, "lr": 5e-5, "freeze_content_decoder": True},
    "eval": {"n_samples": 500, "classifier_epochs": 6, "shape_classifier_epochs": 20},
}

SYNTH_FULL = {
    "output_dir": "runs/synth-full",
    "content": {"source": "synthetic_shapes", "seed": 1, "n": 4000, "target_size": 32},
    "style": {"source": "synthetic_styled", "seed": 2, "n": 4000, "target_size": 32},
    "arch": {
        "image_size": 32, "latent_dim": 32, "base_width": 32, "fc_widths": [256, 512],
        "latent_disc_width": 256, "patch_width": 64, "patch_layers": 2, "fusion": "add",
    },
    "train_content": {"epochs": 100},
    "train_mixture": {"epochs": 100, "lr": 5e-5, "freeze_content_decoder": True},
}

MNIST_SVHN = {
    "output_dir": "runs/mnist-svhn",
    "content": {"source": "idx", "path": "data/train-images-idx3-ubyte", "target_size": 32},
    "style": {"source": "image_dir", "path": "data/svhn", "target_size": 32},
    "arch": {"image_size": 32, "latent_dim": 64, "base_width": 32, "fusion": "concat"},
    "train_content": {"epochs": 100},
    "train_mixture": {"epochs": 300},
}

PRESETS = {"synth-quick": SYNTH_QUICK, "synth-full": SYNTH_FULL, "mnist-svhn": MNIST_SVHN}


def resolve(preset=None, config_path=None, overrides=None) -> RunConfig:
    """Layer preset, config file and flag overrides, then validate."""
    doc = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        doc = copy.deepcopy(PRESETS[preset])
    if config_path is not None:
        doc = merge(doc, read_config(config_path))
    if overrides:
        doc = merge(doc, {k: v for k, v in overrides.items() if v is not None})
    if not doc:
        raise ConfigError("no configuration: pass --config and/or --preset")
    return RunConfig.from_dict(doc)

"""Run configuration: TOML file mirroring the dataclass defaults.

Every command serializes its resolved configuration (and a verbatim copy of
the TOML it was given) into the run directory, so a run can be reproduced
bit for bit from its own artifacts.
"""

from __future__ import annotations

import dataclasses
import json
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .instruct import FuserConfig
from .interpreter import InterpreterConfig
from .prompter import PrompterConfig
from .train import OptimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class DataConfig:
    n: int = 2000
    size: int = 48
    full_face_prob: float = 0.2
    method_probs: tuple[float, float, float] = (0.34, 0.29, 0.37)
    k_min: int = 1
    k_max: int = 11


@dataclass
class RunConfig:
    seed: int = 0
    split_ratios: tuple[int, int, int] = (8, 1, 1)
    data: DataConfig = field(default_factory=DataConfig)
    fpn: PrompterConfig = field(default_factory=PrompterConfig)
    qformer: FuserConfig = field(default_factory=FuserConfig)
    enc_depth: int = 2
    optim_fpn: OptimConfig = field(default_factory=lambda: OptimConfig(lr=3e-3, warmup_steps=60, epochs=3, batch=8, samples_per_epoch=1200))
    optim_stage2: OptimConfig = field(default_factory=lambda: OptimConfig(lr=1e-3, warmup_steps=60, epochs=3, batch=8, samples_per_epoch=800))

    def interpreter_config(self) -> InterpreterConfig:
        return InterpreterConfig(
            image_size=self.data.size,
            in_channels=self.fpn.in_channels,
            patch_size=self.fpn.patch_size,
            enc_depth=self.enc_depth,
            fuser=self.qformer,
            prompt_dim=self.fpn.embed_dim if self.fpn.embed_dim != self.qformer.embed_dim else None,
        )


def _apply_section(instance, section: dict, name: str):
    valid = {f.name for f in dataclasses.fields(instance)}
    unknown = set(section) - valid
    if unknown:
        raise ConfigurationError(f"unknown keys in [{name}]: {sorted(unknown)}")
    values = {**{f.name: getattr(instance, f.name) for f in dataclasses.fields(instance)}, **section}
    # tuples arrive from TOML as lists
    for key, val in values.items():
        if isinstance(val, list):
            values[key] = tuple(val)
    return type(instance)(**values)


def load_run_config(path=None, seed: int | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        raw = tomllib.loads(Path(path).read_text())
        top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
        known_top = {"seed", "split_ratios"}
        unknown = set(top) - known_top
        if unknown:
            raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
        if "seed" in top:
            cfg.seed = int(top["seed"])
        if "split_ratios" in top:
            cfg.split_ratios = tuple(top["split_ratios"])
        if "qformer" in raw and "enc_depth" in raw["qformer"]:
            cfg.enc_depth = int(raw["qformer"].pop("enc_depth"))  # lives in [qformer] for convenience
        for section, attr in (("data", "data"), ("fpn", "fpn"), ("qformer", "qformer"), ("optim_fpn", "optim_fpn"), ("optim_stage2", "optim_stage2")):
            if section in raw:
                setattr(cfg, attr, _apply_section(getattr(cfg, attr), raw[section], section))
    if seed is not None:
        cfg.seed = seed
    if len(cfg.split_ratios) != 3 or any(r <= 0 for r in cfg.split_ratios):
        raise ConfigurationError(f"split_ratios must be three positive numbers, got {cfg.split_ratios}")
    return cfg


def config_to_json(cfg: RunConfig) -> str:
    def encode(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    return json.dumps(encode(cfg), indent=2, sort_keys=True)


def write_run_config(cfg: RunConfig, out_dir, toml_path=None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config_to_json(cfg) + "\n")
    if toml_path is not None:
        shutil.copyfile(toml_path, out_dir / "config.toml")

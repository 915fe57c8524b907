"""Versioned run configuration shared by the CLI commands.

A config file is JSON with a top-level ``version`` and the sections
``schedule``, ``arch``, ``train``, ``loss``, ``sample`` and ``paths``.
Every section is optional; unknown keys anywhere are rejected.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .bridge import SampleConfig
from .loss import LossConfig
from .predictor.train import TrainConfig
from .predictor.unet import UNetConfig
from .schedule import Schedule, make_schedule

CONFIG_VERSION = 1
SCHEDULE_KEYS = ("n_steps", "beta_max", "total_variance")


class ConfigError(ValueError):
    pass


def desk_train_config() -> TrainConfig:
    return TrainConfig(steps=3000, batch=8, lr=1e-3)


@dataclass
class RunConfig:
    schedule: dict = field(default_factory=lambda: {"n_steps": 50, "total_variance": 1.0})
    arch: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=desk_train_config)
    sample: SampleConfig = field(default_factory=SampleConfig)
    paths: dict = field(default_factory=lambda: {"data": None, "out": None})

    @property
    def loss(self) -> LossConfig:
        return self.train.loss

    def make_schedule(self) -> Schedule:
        return make_schedule(**self.schedule)

    def to_dict(self) -> dict:
        train = dataclasses.asdict(self.train)
        loss = train.pop("loss")
        return {
            "version": CONFIG_VERSION,
            "schedule": dict(self.schedule),
            "arch": self.arch.to_dict(),
            "train": train,
            "loss": loss,
            "sample": dataclasses.asdict(self.sample),
            "paths": dict(self.paths),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _check_keys(d, ("version", "schedule", "arch", "train", "loss", "sample", "paths"), "config")
        if d.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {d.get('version')!r}")
        base = cls().to_dict()
        merged = {k: {**base[k], **d.get(k, {})} for k in base if k != "version"}
        sched = merged["schedule"]
        _check_keys(sched, SCHEDULE_KEYS, "schedule")
        if "beta_max" in d.get("schedule", {}):
            sched.pop("total_variance", None)
        try:
            loss = _build(LossConfig, merged["loss"], "loss")
            train = _build(TrainConfig, {**merged["train"], "loss": loss}, "train")
            arch = _build(UNetConfig, merged["arch"], "arch")
            if arch.eta != train.eta:
                if "eta" in d.get("arch", {}):
                    raise ConfigError(f"arch.eta={arch.eta} disagrees with train.eta={train.eta}")
                arch = dataclasses.replace(arch, eta=train.eta)
            cfg = cls(schedule=sched, arch=arch, train=train,
                      sample=_build(SampleConfig, merged["sample"], "sample"),
                      paths=_paths(merged["paths"]))
            cfg.make_schedule()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        return cfg

    def override(self, dotted: dict) -> "RunConfig":
        """Return a copy with ``{"section.key": value}`` overrides applied."""
        d = self.to_dict()
        for key, value in dotted.items():
            if value is None:
                continue
            section, _, name = key.partition(".")
            if section not in d or section == "version" or not name:
                raise ConfigError(f"unknown config key {key!r}")
            d[section][name] = value
            if key == "schedule.beta_max":
                d["schedule"].pop("total_variance", None)
            if key == "train.eta":
                d["arch"]["eta"] = value
        return RunConfig.from_dict(d)


def _check_keys(d: dict, allowed, where: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _build(cls, d: dict, where: str):
    _check_keys(d, [f.name for f in dataclasses.fields(cls)], where)
    return cls(**d)


def _paths(d: dict) -> dict:
    _check_keys(d, ("data", "out"), "paths")
    return d


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return RunConfig.from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_assignment(text: str) -> tuple[str, object]:
    """Parse ``section.key=value``; the value is read as JSON, else as a string."""
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"expected section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value

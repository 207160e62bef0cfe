"""Run configuration: YAML file plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .agents import Limits
from .errors import ConfigError
from .planner import SamplingConfig


@dataclass
class ProviderConfig:
    kind: str = "scripted"  # scripted | remote
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    max_concurrent: int = 4
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0
    script: str | None = None  # scripted replies file; unscripted prompts go to the simulator


@dataclass
class ValidationConfig:
    trials: int = 3
    rule_aware: bool = True
    salvage_min_turns: int = 10
    sarcasm_review: str | None = None  # file collecting sarcasm turns for manual review


@dataclass
class RunConfig:
    seed: int = 0
    n: int = 10
    out: str = "out"
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    limits: Limits = field(default_factory=Limits)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    split_ratios: tuple = (0.8, 0.1, 0.1)
    ood_intents: tuple = ()
    denylist: tuple = ("watch_tv_channel",)
    descriptions: str | None = None  # one description per line; default is the bundled set
    catalog: str | None = None  # existing catalog file; skips stage 1
    pools: str | None = None  # existing pools file; skips stage 2
    prompt_dir: str | None = None

    def validate(self) -> None:
        if self.n < 0:
            raise ConfigError("n must be non-negative")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.provider.kind not in ("scripted", "remote"):
            raise ConfigError(f"unknown provider kind {self.provider.kind!r}")
        if self.provider.kind == "remote" and not (self.provider.endpoint and self.provider.model):
            raise ConfigError("remote provider needs endpoint and model")
        self.sampling.validate()
        ratios = tuple(self.split_ratios)
        if len(ratios) != 3 or any(not 0 <= r <= 1 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three probabilities summing to 1, got {ratios}")
        if self.limits.max_turns < 2 or self.limits.retries < 0 or self.limits.max_system_steps < 1:
            raise ConfigError("invalid turn or retry limits")
        if self.validation.trials < 1:
            raise ConfigError("validation trials must be at least 1")
        for name in ("descriptions", "catalog", "pools", "prompt_dir"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} path does not exist: {p}")
        if self.provider.script is not None and not Path(self.provider.script).exists():
            raise ConfigError(f"provider script does not exist: {self.provider.script}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("jobs")  # neither changes the outputs
        d.pop("out")
        return d

    def digest(self) -> str:
        payload = json.dumps(self.as_dict(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _build(cls, data: dict | None, where: str):
    data = dict(data or {})
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    sampling = dict(data.pop("sampling", None) or {})
    for key in ("intent_count_weights", "phenomenon_count_weights"):
        if key in sampling:
            sampling[key] = {int(k): float(v) for k, v in sampling[key].items()}
    nested = {
        "provider": _build(ProviderConfig, data.pop("provider", None), "provider"),
        "sampling": _build(SamplingConfig, sampling, "sampling"),
        "limits": _build(Limits, data.pop("limits", None), "limits"),
        "validation": _build(ValidationConfig, data.pop("validation", None), "validation"),
    }
    for key in ("split_ratios", "ood_intents", "denylist"):
        if key in data:
            data[key] = tuple(data[key])
    config = _build(RunConfig, {**data, **nested}, "config")
    return config


def load_config(path=None, **overrides) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
    provider_kind = overrides.pop("provider", None)
    data.update({k: v for k, v in overrides.items() if v is not None})
    config = config_from_dict(data)
    if provider_kind is not None:
        config.provider.kind = provider_kind
    config.validate()
    return config

"""Application config: one JSON file with per-module sections, overridden by CLI flags."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .backends import BackendConfig
from .metrics import DEFAULT_BG_THRESHOLD, DEFAULT_POINTS
from .pipeline import PipelineConfig
from .trainer import LossConfig, TrainConfig

CONFIG_ENV = "MAGICFORGE_CONFIG"


class ConfigError(ValueError):
    pass


class PromptSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    conditions: list[str] | None = None


class PipelineSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples_target: int = Field(10, ge=1)
    categories_per_sample: int = Field(1, ge=1, le=2)
    detection_gate_threshold: float = Field(0.35, ge=0, le=1)
    seed: int = 0
    max_attempts: int = Field(20, ge=1)
    jobs: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bg_threshold: float = Field(DEFAULT_BG_THRESHOLD, ge=0, le=1)
    points: int = Field(DEFAULT_POINTS, ge=1)
    mode: Literal["miou", "pmiou"] = "miou"
    seed: int = 0


class AppConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    prompt: PromptSection = PromptSection()
    backend: BackendConfig = BackendConfig()
    pipeline: PipelineSection = PipelineSection()
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalSection = EvalSection()

    @model_validator(mode="after")
    def _loss_lives_in_its_own_section(self):
        if "loss" in self.train.model_fields_set:
            raise ValueError("put loss weights under the top-level 'loss' section, not 'train.loss'")
        return self

    def pipeline_config(self, out_dir) -> PipelineConfig:
        return PipelineConfig(**self.pipeline.model_dump(), out_dir=str(out_dir),
                              conditions=self.prompt.conditions, backend=self.backend)

    def train_config(self) -> TrainConfig:
        return self.train.model_copy(update={"loss": self.loss})


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None, env=None) -> AppConfig:
    """Defaults, then the JSON file (``path`` or ``$MAGICFORGE_CONFIG``), then ``overrides``."""
    env = os.environ if env is None else env
    path = path or env.get(CONFIG_ENV)
    doc: dict = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    try:
        return AppConfig.model_validate(deep_merge(doc, overrides or {}))
    except ValidationError as e:
        raise ConfigError(str(e)) from e

"""Run configuration: one JSON tree shared by every CLI subcommand.

Precedence is CLI flag > STAIRDIFF_OUTPUT_DIR (output directory only) >
config file > built-in default. Defaults describe the desk-scale setup:
a 100-step schedule (raise schedule.timesteps to 1000 for the full grid),
a 2-block denoiser and the rotating-circle dataset.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from stairdiff.denoiser import DenoiserConfig
from stairdiff.sampling import SampleConfig
from stairdiff.schedule import NoiseSchedule, build_linear_schedule
from stairdiff.training import SyntheticDatasetSpec, TrainConfig

__all__ = ["RunConfig", "ConfigError", "load_run_config", "DEFAULT_CONFIG"]

ENV_OUTPUT_DIR = "STAIRDIFF_OUTPUT_DIR"

DEFAULT_CONFIG: dict = {
    # Toy grid: 100 steps with a one-decade beta ramp keeps the 2000-step
    # smoke run learnable; set timesteps=1000, beta_end=0.002 for the full
    # reference schedule.
    "schedule": {"timesteps": 100, "beta_start": 0.0001, "beta_end": 0.001},
    "denoiser": {"d_model": 32, "n_layers": 2, "n_heads": 2, "x0_clamp": 2.0},
    "dataset": {
        "n_sequences": 512,
        "frames": 8,
        "tokens": 1,
        "dim": 2,
        "angular_velocity_range": [0.1, 0.5],
        "observation_noise_std": 0.01,
        "seed": 0,
    },
    "train": {
        "steps": 2000,
        "batch_size": 16,
        "learning_rate": 2e-4,
        "finetune_rate": 1e-5,
        "finetune_after": None,
        "grad_clip_norm": 1.0,
        "ema_decay": 0.999,
        "momentum": 0.9,
        "seed": 0,
        "scale_factor": 0.5,
        "remap_clean": False,
    },
    "sample": {"grid_steps": 50, "offset": 0, "mode": "recorrupt_deterministic", "seed": 0},
    "paths": {"output_dir": "stairdiff-out", "checkpoint": None, "dataset_cache": None},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    tree: dict

    @property
    def schedule(self) -> NoiseSchedule:
        s = self.tree["schedule"]
        return build_linear_schedule(s["timesteps"], s["beta_start"], s["beta_end"])

    @property
    def denoiser(self) -> DenoiserConfig:
        d = self.tree["dataset"]
        return DenoiserConfig(
            frames=d["frames"], tokens=d["tokens"], dim=d["dim"], **self.tree["denoiser"]
        )

    @property
    def dataset(self) -> SyntheticDatasetSpec:
        d = self.tree["dataset"]
        return SyntheticDatasetSpec(
            n_sequences=d["n_sequences"],
            F=d["frames"],
            D=d["dim"],
            L=d["tokens"],
            angular_velocity_range=tuple(d["angular_velocity_range"]),
            observation_noise_std=d["observation_noise_std"],
            seed=d["seed"],
        )

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(**self.tree["train"])

    def sample(self, offset: int | None = None, mode: str | None = None, seed: int | None = None) -> SampleConfig:
        s = self.tree["sample"]
        return SampleConfig(
            frames=self.tree["dataset"]["frames"],
            grid_steps=s["grid_steps"],
            offset=s["offset"] if offset is None else offset,
            mode=s["mode"] if mode is None else mode,
            seed=s["seed"] if seed is None else seed,
            scale_factor=self.tree["train"]["scale_factor"],
        )

    @property
    def output_dir(self) -> Path:
        return Path(self.tree["paths"]["output_dir"])

    def validate(self) -> None:
        t = self.tree
        if t["sample"]["grid_steps"] > t["schedule"]["timesteps"]:
            raise ConfigError(
                f"sample.grid_steps ({t['sample']['grid_steps']}) exceeds "
                f"schedule.timesteps ({t['schedule']['timesteps']})"
            )
        # surface field errors early, with the dataclass message
        try:
            self.schedule, self.denoiser, self.dataset, self.train, self.sample()
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc


def _merge(base: dict, override: dict, crumb: str = "") -> dict:
    out = dict(base)
    for key, val in override.items():
        where = f"{crumb}.{key}" if crumb else key
        if key not in base:
            raise ConfigError(f"unknown config field {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config field {where!r} must be a table")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = val
    return out


def load_run_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read the JSON config, overlay overrides, validate cross-field rules."""
    tree = DEFAULT_CONFIG
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}")
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        tree = _merge(tree, user)
    env_out = os.environ.get(ENV_OUTPUT_DIR)
    if env_out:
        tree["paths"] = {**tree["paths"], "output_dir": env_out}
    if overrides:
        tree = _merge(tree, overrides)
    cfg = RunConfig(tree=tree)
    cfg.validate()
    return cfg

"""Seeded training loop on a synthetic rotating-latent dataset.

The dataset is a stand-in for encoded video: each sequence starts on the
unit circle and rotates by a per-sequence angular velocity with a little
observation noise, so earlier frames genuinely predict later ones. Training
corrupts each sample under a composition drawn from the anchored lattice
sampler, optimizes the x0 loss with momentum SGD, clips the global gradient
norm, and tracks an exponential moving average of the parameters. A run is
a pure function of its seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from stairdiff import denoiser as dn
from stairdiff.lattice import build_count_tables, sample_compositions
from stairdiff.schedule import NoiseSchedule
from stairdiff.video import LatentVideo

__all__ = [
    "TrainConfig",
    "SyntheticDatasetSpec",
    "make_synthetic_dataset",
    "train",
    "TrainResult",
    "LogRow",
    "TrainingDiverged",
    "write_loss_csv",
]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 2e-4
    finetune_rate: float = 1e-5
    finetune_after: int | None = None  # step after which the rate drops; None = off
    grad_clip_norm: float = 1.0
    ema_decay: float = 0.999
    momentum: float = 0.9
    seed: int = 0
    scale_factor: float = 0.5  # latents are multiplied by this before corruption
    remap_clean: bool = False  # expose t=0 context frames during training

    def __post_init__(self):
        if min(self.steps, self.batch_size) < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.learning_rate < 0 or self.grad_clip_norm <= 0 or self.scale_factor <= 0:
            raise ValueError("learning_rate, grad_clip_norm, scale_factor must be positive")
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_sequences: int
    F: int
    D: int = 2
    L: int = 1
    angular_velocity_range: tuple[float, float] = (0.1, 0.5)
    observation_noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.angular_velocity_range
        if lo > hi:
            raise ValueError(f"angular velocity range {self.angular_velocity_range} reversed")
        if self.F < 2:
            raise ValueError("need at least two frames per sequence")
        if self.D < 2:
            raise ValueError("the rotation acts on the first two dims; need D >= 2")


def make_synthetic_dataset(spec: SyntheticDatasetSpec) -> list[LatentVideo]:
    """Rotating points: z1 on the unit circle, z_{i+1} = R(omega) z_i + noise."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.n_sequences):
        omega = rng.uniform(*spec.angular_velocity_range)
        theta0 = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(omega), np.sin(omega)
        rot = np.array([[c, -s], [s, c]])
        z = np.zeros((spec.F, spec.L, spec.D))
        z[0, :, 0] = np.cos(theta0)
        z[0, :, 1] = np.sin(theta0)
        for i in range(1, spec.F):
            z[i] = z[i - 1]
            z[i, :, :2] = z[i - 1, :, :2] @ rot.T
            if spec.observation_noise_std > 0:
                z[i] += spec.observation_noise_std * rng.standard_normal((spec.L, spec.D))
        out.append(LatentVideo(data=z))
    return out


@dataclass(frozen=True)
class LogRow:
    step: int
    loss: float
    grad_norm: float  # before clipping
    grad_norm_clipped: float
    lr: float


@dataclass
class TrainResult:
    params: dn.DenoiserParams
    ema_params: dn.DenoiserParams
    log: list[LogRow]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, batch_indices: np.ndarray, params: dn.DenoiserParams):
        super().__init__(f"non-finite loss at step {step} (batch {batch_indices.tolist()})")
        self.step = step
        self.batch_indices = batch_indices
        self.params = params


def _global_norm(grads: dn.DenoiserParams) -> float:
    return float(np.sqrt(sum(float((g**2).sum()) for g in grads.values())))


def train(
    config: TrainConfig,
    dataset: list[LatentVideo],
    denoiser_config: dn.DenoiserConfig,
    sched: NoiseSchedule,
    callback: Callable[[int, dict], None] | None = None,
) -> TrainResult:
    """Run the loop; fully reproducible from config.seed.

    Per step: draw a batch from a seeded epoch shuffle, scale the latents,
    draw one timestep composition per sample, corrupt with fresh noise,
    backpropagate, clip the global gradient norm, take a momentum-SGD step
    and update the EMA. The optional callback receives a dict with the
    step's params, ema, grads, compositions and loss (used by tests).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    data = np.stack([v.data for v in dataset])
    n = data.shape[0]
    if data.shape[1] != denoiser_config.frames:
        raise ValueError(
            f"dataset frames {data.shape[1]} != denoiser config {denoiser_config.frames}"
        )
    rng = np.random.default_rng(config.seed)
    params = dn.init_params(denoiser_config, sched.T, rng)
    ema = {k: v.copy() for k, v in params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    tables = build_count_tables(denoiser_config.frames, sched.T)
    log: list[LogRow] = []

    order = rng.permutation(n)
    cursor = 0
    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size

        z0 = data[idx] * config.scale_factor
        comps = sample_compositions(tables, len(idx), rng)
        if config.remap_clean:
            flip = rng.random(len(idx)) < 0.5
            comps = np.where(flip[:, None] & (comps == 1), 0, comps)
        eps = rng.standard_normal(z0.shape)
        try:
            loss, grads = dn.loss_and_grad(params, denoiser_config, z0, comps, eps, sched)
        except FloatingPointError as exc:
            raise TrainingDiverged(step, idx, params) from exc

        gnorm = _global_norm(grads)
        if gnorm > config.grad_clip_norm:
            scale = config.grad_clip_norm / gnorm
            grads = {k: g * scale for k, g in grads.items()}
        lr = config.learning_rate
        if config.finetune_after is not None and step > config.finetune_after:
            lr = config.finetune_rate
        for k in params:
            velocity[k] = config.momentum * velocity[k] + grads[k]
            params[k] = params[k] - lr * velocity[k]
            ema[k] = config.ema_decay * ema[k] + (1.0 - config.ema_decay) * params[k]
        log.append(LogRow(step, loss, gnorm, _global_norm(grads), lr))
        if callback is not None:
            callback(
                step,
                {"params": params, "ema": ema, "grads": grads, "comps": comps, "loss": loss},
            )
    return TrainResult(params=params, ema_params=ema, log=log)


def write_loss_csv(log: list[LogRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "grad_norm", "lr"])
        for row in log:
            writer.writerow([row.step, repr(row.loss), repr(row.grad_norm), repr(row.lr)])

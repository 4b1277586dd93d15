"""Inference: walk a trajectory plan, denoising and re-corrupting frames.

Each plan step runs one model forward over the whole sequence, then moves
only the frames whose grid level changed ("masked" frames carry their
latent unchanged):

    recorrupt_deterministic: a single eta=0 skip step between the mapped
        true timesteps (spans multi-step jumps in one call);
    recorrupt_stochastic: the clean prediction is re-corrupted to the new
        timestep with fresh noise;
    posterior: one stochastic posterior step per unit timestep, which
        requires the grid to be the full timestep range (N = T).

Frames still at the top of the grid are fed to the model as context but do
not move until the plan says so.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from stairdiff import denoiser as dn
from stairdiff import schedule as sc
from stairdiff.trajectory import plan_trajectory
from stairdiff.video import LatentVideo

__all__ = ["SampleConfig", "generate", "generate_with", "GenerationDiverged", "MODES"]

MODES = ("recorrupt_deterministic", "recorrupt_stochastic", "posterior")

DenoiseFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SampleConfig:
    frames: int
    grid_steps: int  # N sampler levels over the schedule
    offset: int  # inter-frame timestep difference, grid units
    mode: str = "recorrupt_deterministic"
    seed: int = 0
    scale_factor: float = 0.5  # must match training

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.frames < 1 or self.grid_steps < 1 or self.offset < 0:
            raise ValueError("frames, grid_steps must be >= 1 and offset >= 0")
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")


class GenerationDiverged(RuntimeError):
    def __init__(self, step: int, levels: list[int]):
        super().__init__(f"non-finite latents after plan step {step} (levels {levels})")
        self.step = step
        self.levels = levels


def generate_with(
    denoise_fn: DenoiseFn,
    sched: sc.NoiseSchedule,
    config: SampleConfig,
    rng: np.random.Generator,
    *,
    tokens: int,
    dim: int,
    transition_log: list | None = None,
) -> LatentVideo:
    """Run the sampling loop with an arbitrary denoiser callable.

    denoise_fn(z, t) maps the current (F, L, D) latents and their per-frame
    true timesteps to a clean prediction. transition_log, when given,
    collects (step_index, frame, from_level, to_level) for every frame
    update, letting tests audit the walk against the plan.
    """
    N = config.grid_steps
    if N > sched.T:
        raise ValueError(f"grid_steps {N} exceeds schedule T={sched.T}")
    if config.mode == "posterior" and N != sched.T:
        raise ValueError(
            f"posterior mode steps one timestep at a time and needs N == T, "
            f"got N={N}, T={sched.T}"
        )
    plan = plan_trajectory(config.frames, N, config.offset, T=sched.T)
    gm = plan.grid_map
    F = config.frames
    z = rng.standard_normal((F, tokens, dim))
    levels = [N] * F
    for step_idx, step in enumerate(plan.steps):
        t_cond = np.array([gm[g] for g in levels], dtype=np.int64)
        x0_hat = denoise_fn(z, t_cond)
        for f in range(F):
            if not step.update_mask[f]:
                continue
            g_from, g_to = levels[f], step.composition.timesteps[f]
            t_from, t_to = gm[g_from], gm[g_to]
            if config.mode == "recorrupt_deterministic":
                z[f] = sc.ddim_step(z[f], x0_hat[f], t_from, t_to, sched)
            elif config.mode == "recorrupt_stochastic":
                if t_to == 0:
                    z[f] = x0_hat[f]
                else:
                    z[f] = sc.corrupt_frame(
                        x0_hat[f], t_to, rng.standard_normal(x0_hat[f].shape), sched
                    )
            else:  # posterior
                for tt in range(t_from, t_to, -1):
                    noise = rng.standard_normal(z[f].shape)
                    z[f] = sc.posterior_step(z[f], x0_hat[f], tt, noise, sched)
            if transition_log is not None:
                transition_log.append((step_idx, f, g_from, g_to))
        levels = list(step.composition.timesteps)
        if not np.all(np.isfinite(z)):
            raise GenerationDiverged(step_idx, levels)
    return LatentVideo(data=z / config.scale_factor, scale_factor=config.scale_factor)


def generate(
    params: dn.DenoiserParams,
    denoiser_config: dn.DenoiserConfig,
    sched: sc.NoiseSchedule,
    config: SampleConfig,
    rng: np.random.Generator,
    transition_log: list | None = None,
) -> LatentVideo:
    """Generate one latent video from pure noise with the trained denoiser."""
    if denoiser_config.frames != config.frames:
        raise ValueError(
            f"denoiser built for {denoiser_config.frames} frames, "
            f"sampler asked for {config.frames}"
        )

    def denoise_fn(z: np.ndarray, t: np.ndarray) -> np.ndarray:
        return dn.forward_batch(params, denoiser_config, z[None], t[None])[0]

    return generate_with(
        denoise_fn,
        sched,
        config,
        rng,
        tokens=denoiser_config.tokens,
        dim=denoiser_config.dim,
        transition_log=transition_log,
    )

"""stairdiff: asynchronous frame-wise diffusion at desk scale.

Frames of a latent video carry individual diffusion timesteps constrained
to be non-decreasing from the first frame to the last. The package provides
the diffusion kernels, exact counting and unbiased sampling over that
timestep lattice, a staggered inference-trajectory planner, a toy causal
denoiser with hand-written gradients, and the training/sampling loops plus
statistical verification that tie them together.
"""

__version__ = "0.1.0"

from stairdiff.lattice import (
    CountTables,
    TimestepComposition,
    build_count_tables,
    composition_log_probability,
    count_compositions,
    naive_sequential_sample,
    sample_composition,
    sample_compositions,
)
from stairdiff.schedule import (
    NoiseSchedule,
    build_linear_schedule,
    corrupt_frame,
    ddim_step,
    eps_from_x0,
    posterior_step,
)
from stairdiff.trajectory import TrajectoryPlan, TrajectoryStep, grid_to_timestep, plan_trajectory
from stairdiff.video import LatentVideo, load_latent_video, save_latent_video

__all__ = [
    "__version__",
    "NoiseSchedule",
    "build_linear_schedule",
    "corrupt_frame",
    "eps_from_x0",
    "posterior_step",
    "ddim_step",
    "TimestepComposition",
    "CountTables",
    "build_count_tables",
    "count_compositions",
    "sample_composition",
    "sample_compositions",
    "naive_sequential_sample",
    "composition_log_probability",
    "TrajectoryPlan",
    "TrajectoryStep",
    "plan_trajectory",
    "grid_to_timestep",
    "LatentVideo",
    "save_latent_video",
    "load_latent_video",
]

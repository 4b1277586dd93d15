"""Inference-time trajectory planning with a tunable inter-frame offset.

A trajectory is the ordered sequence of timestep compositions a sampler
walks from all-noise to all-clean. The planner keeps neighbouring frames a
fixed number of grid steps apart (the offset): offset 0 denoises all frames
in lockstep, offset >= N degenerates to strict frame-by-frame generation,
and everything in between staggers the frames.

Per step, frames update in order:

    frame 1:  t_1 <- t_1 - 1                    while t_1 > 0
    frame i:  t_i <- min(t'_{i-1} + offset, N)  if frame i-1 was still
                                                active when the step began
              t_i <- t_i - 1                    otherwise, while t_i > 0

where t'_{i-1} is frame i-1's value after its own update this step. A plan
for F frames over an N-level grid always takes N + (F-1)*min(offset, N)
steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from stairdiff.lattice import TimestepComposition

__all__ = [
    "TrajectoryStep",
    "TrajectoryPlan",
    "plan_trajectory",
    "grid_to_timestep",
    "build_grid_map",
    "export_plan",
    "read_plan_records",
]


@dataclass(frozen=True)
class TrajectoryStep:
    composition: TimestepComposition  # grid levels, reversed (non-decreasing) order
    update_mask: tuple[bool, ...]  # True where the level changed this step


@dataclass(frozen=True)
class TrajectoryPlan:
    frames: int
    grid_steps: int  # N: levels run N (pure noise) down to 0 (clean)
    offset: int  # timestep difference between neighbouring frames, grid units
    grid_map: tuple[int, ...]  # level -> true diffusion timestep
    steps: tuple[TrajectoryStep, ...]

    def __len__(self) -> int:
        return len(self.steps)


def build_grid_map(N: int, T: int) -> tuple[int, ...]:
    """Map grid levels 0..N onto timesteps 0..T, evenly spaced and increasing."""
    if not (1 <= N <= T):
        raise ValueError(f"need 1 <= N <= T, got N={N}, T={T}")
    return tuple(int(round(g * T / N)) for g in range(N + 1))


def grid_to_timestep(grid_index: int, N: int, T: int) -> int:
    """True diffusion timestep for one grid level (0 -> 0, N -> T)."""
    if not (0 <= grid_index <= N):
        raise ValueError(f"grid index {grid_index} outside [0, {N}]")
    return build_grid_map(N, T)[grid_index]


def plan_trajectory(F: int, N: int, offset: int, T: int | None = None) -> TrajectoryPlan:
    """Plan the composition sequence for F frames over an N-level grid.

    T attaches the true-timestep grid map; it defaults to N (identity).
    The first recorded step is the state after one update of the all-N
    start; the last has every frame at 0.
    """
    if F < 1 or N < 1 or offset < 0:
        raise ValueError(f"need F >= 1, N >= 1, offset >= 0, got ({F}, {N}, {offset})")
    grid_map = build_grid_map(N, N if T is None else T)
    state = [N] * F
    steps: list[TrajectoryStep] = []
    # Upper bound on steps; the closed form is asserted by the test suite.
    budget = N + (F - 1) * min(offset, N) + 1
    while any(v > 0 for v in state):
        if len(steps) >= budget:
            raise AssertionError(f"plan for ({F}, {N}, {offset}) failed to terminate")
        prev = state
        state = _advance(prev, N, offset)
        mask = tuple(a != b for a, b in zip(state, prev))
        comp = TimestepComposition(tuple(state), N)
        steps.append(TrajectoryStep(composition=comp, update_mask=mask))
    return TrajectoryPlan(
        frames=F, grid_steps=N, offset=offset, grid_map=grid_map, steps=tuple(steps)
    )


def _advance(prev: list[int], N: int, offset: int) -> list[int]:
    new = list(prev)
    new[0] = max(prev[0] - 1, 0)
    for i in range(1, len(prev)):
        if prev[i] == 0:
            new[i] = 0
        elif prev[i - 1] > 0:
            # Track the predecessor's fresh value; the branch condition uses
            # its value from before the step, which decides the step count.
            new[i] = min(new[i - 1] + offset, N)
        else:
            new[i] = prev[i] - 1
    return new


def export_plan(plan: TrajectoryPlan, path: str | Path) -> None:
    """Write the plan as line-delimited records for golden files and debugging."""
    with open(path, "w") as fh:
        fh.write(
            f"plan frames={plan.frames} grid_steps={plan.grid_steps} "
            f"offset={plan.offset} grid_map={','.join(map(str, plan.grid_map))}\n"
        )
        for idx, step in enumerate(plan.steps):
            comp = ",".join(map(str, step.composition.timesteps))
            mask = "".join("1" if m else "0" for m in step.update_mask)
            fh.write(f"{idx}\t{comp}\t{mask}\n")


def read_plan_records(path: str | Path) -> list[tuple[int, tuple[int, ...], tuple[bool, ...]]]:
    records = []
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("plan "):
            raise ValueError(f"{path}: missing plan header")
        for line in fh:
            idx, comp, mask = line.rstrip("\n").split("\t")
            records.append(
                (
                    int(idx),
                    tuple(int(x) for x in comp.split(",")),
                    tuple(c == "1" for c in mask),
                )
            )
    return records

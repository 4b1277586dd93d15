"""The non-decreasing timestep lattice: counting and exact-uniform sampling.

A timestep composition assigns one diffusion timestep to each of F frames
subject to t_1 <= t_2 <= ... <= t_F. This module counts such compositions
exactly, samples them with an anchor-then-propagate scheme that keeps every
(frame, timestep) pair equally likely, and scores compositions under the
resulting mixture law.

Counting is exact throughout: the tables hold arbitrary-precision integers
and probabilities are formed by converting exact sums to float64 only at
the moment of a categorical draw. The draw loops live in stairdiff._kernels
(compiled when available, numpy otherwise).

Count tables are immutable once built and safe to share across threads;
samplers draw from a caller-owned Generator, so parallel sampling needs one
independently seeded stream per worker, never a shared Generator.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from stairdiff import _kernels

__all__ = [
    "TimestepComposition",
    "CountTables",
    "count_compositions",
    "build_count_tables",
    "sample_composition",
    "sample_compositions",
    "naive_sequential_sample",
    "naive_sequential_samples",
    "composition_log_probability",
    "save_count_tables",
    "load_count_tables",
]

# Counts wider than this need more than 16 bytes each on disk; the flag
# records that the fixed 128-bit width was exceeded.
_WIDTH_128 = 2**127 - 1

TABLES_MAGIC = b"STAIRCNT"
TABLES_VERSION = 1


@dataclass(frozen=True)
class TimestepComposition:
    """A non-decreasing vector of per-frame timesteps.

    Entries lie in [0, T]; training-time samples use [1, T] and 0 (clean)
    appears only at inference.
    """

    timesteps: tuple[int, ...]
    max_timestep: int

    def __post_init__(self):
        if len(self.timesteps) == 0:
            raise ValueError("composition needs at least one frame")
        prev = 0
        for t in self.timesteps:
            if not (0 <= t <= self.max_timestep):
                raise ValueError(
                    f"timestep {t} outside [0, {self.max_timestep}] in {self.timesteps}"
                )
            if t < prev:
                raise ValueError(f"timesteps must be non-decreasing, got {self.timesteps}")
            prev = t

    @property
    def frames(self) -> int:
        return len(self.timesteps)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.timesteps, dtype=np.int64)


@dataclass
class CountTables:
    """Exact composition counts anchored at each (frame, timestep) pair.

    d_start[i][j] counts non-decreasing suffixes <t_i=j, ..., t_F>;
    d_end[i][j] counts non-decreasing prefixes <t_1, ..., t_i=j>. Rows are
    1-indexed by frame and timestep (index 0 is padding). overflow_flag is
    set when some count exceeds the 128-bit serialization width.
    """

    frames: int
    max_timestep: int
    d_start: list[list[int]]
    d_end: list[list[int]]
    overflow_flag: bool
    # float64 images of the exact per-row prefix sums, used for draws
    _cum_start: np.ndarray = field(repr=False)
    _cum_end: np.ndarray = field(repr=False)

    def total(self) -> int:
        return sum(self.d_start[1][1:])


def build_count_tables(F: int, T: int) -> CountTables:
    """Build both count tables for F frames over timesteps 1..T.

    Recurrences (running prefix/suffix sums, exact integers):

        d_start[F][j] = 1;  d_start[i][j] = sum_{k >= j} d_start[i+1][k]
        d_end[1][j]   = 1;  d_end[i][j]   = sum_{k <= j} d_end[i-1][k]
    """
    if F < 1 or T < 1:
        raise ValueError(f"need F >= 1 and T >= 1, got F={F}, T={T}")
    d_start = [[0] * (T + 1) for _ in range(F + 1)]
    d_end = [[0] * (T + 1) for _ in range(F + 1)]
    d_start[F][1:] = [1] * T
    for i in range(F - 1, 0, -1):
        acc = 0
        for j in range(T, 0, -1):
            acc += d_start[i + 1][j]
            d_start[i][j] = acc
    d_end[1][1:] = [1] * T
    for i in range(2, F + 1):
        acc = 0
        for j in range(1, T + 1):
            acc += d_end[i - 1][j]
            d_end[i][j] = acc
    return _assemble(F, T, d_start, d_end)


def _assemble(F: int, T: int, d_start: list[list[int]], d_end: list[list[int]]) -> CountTables:
    # Largest cells sit at the least-constrained corners.
    peak = max(d_start[1][1], d_end[F][T])
    return CountTables(
        frames=F,
        max_timestep=T,
        d_start=d_start,
        d_end=d_end,
        overflow_flag=peak > _WIDTH_128,
        _cum_start=_cumulative_float_rows(d_start, F, T),
        _cum_end=_cumulative_float_rows(d_end, F, T),
    )


def _cumulative_float_rows(table: list[list[int]], F: int, T: int) -> np.ndarray:
    """Per-row exact prefix sums, each converted to float64 individually."""
    cum = np.zeros((F + 1, T + 1), dtype=np.float64)
    for i in range(1, F + 1):
        acc = 0
        for j in range(1, T + 1):
            acc += table[i][j]
            cum[i, j] = float(acc)
    return cum


def count_compositions(F: int, T: int) -> int:
    """Exact number of non-decreasing compositions with entries in [1, T].

    Computed twice — by summing the DP table and by the closed form
    C(T+F-1, F) — and the two must agree.
    """
    if F < 1 or T < 1:
        raise ValueError(f"need F >= 1 and T >= 1, got F={F}, T={T}")
    closed = math.comb(T + F - 1, F)
    by_dp = build_count_tables(F, T).total()
    if closed != by_dp:
        raise AssertionError(
            f"count mismatch for F={F}, T={T}: closed form {closed} vs DP {by_dp}"
        )
    return closed


def _uniforms(rng: np.random.Generator, n: int, cols: int) -> np.ndarray:
    return rng.random((n, cols), dtype=np.float64)


def sample_compositions(
    tables: CountTables,
    n: int,
    rng: np.random.Generator,
    return_anchors: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw n compositions via the anchored sampler; returns (n, F) int64.

    Each draw picks a uniformly random (frame, timestep) anchor and extends
    it to a full composition, uniformly over the compositions consistent
    with that anchor. Earlier frames are filled right-to-left with weights
    d_end, later frames left-to-right with weights d_start. With
    return_anchors, also returns the anchor frames (1-based) and anchor
    timesteps of each draw.
    """
    F, T = tables.frames, tables.max_timestep
    u = _uniforms(rng, n, F + 2)
    draws = _kernels.anchored_draws(tables._cum_end, tables._cum_start, u, F, T)
    if not return_anchors:
        return draws
    # Same arithmetic as the kernels' anchor selection.
    f = np.minimum((u[:, 0] * F).astype(np.int64), F - 1) + 1
    tau = np.minimum((u[:, 1] * T).astype(np.int64), T - 1) + 1
    return draws, f, tau


def sample_composition(
    tables: CountTables,
    rng: np.random.Generator,
    remap_clean: bool = False,
) -> TimestepComposition:
    """Draw one composition via the anchored sampler.

    With remap_clean, a trailing coin flip turns every t=1 entry into t=0
    with probability 1/2 (all or none, preserving monotonicity), exposing a
    model to clean context frames. Off by default.
    """
    t = sample_compositions(tables, 1, rng)[0]
    if remap_clean and t[0] == 1 and rng.random() < 0.5:
        t = np.where(t == 1, 0, t)
    return TimestepComposition(tuple(int(x) for x in t), tables.max_timestep)


def naive_sequential_samples(
    F: int, T: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n compositions frame by frame: t1 ~ U(1,T), t_i ~ U(t_{i-1}, T).

    This is the obvious scheme and it is badly biased: the all-T composition
    gets probability 1/T, astronomically more than its share.
    """
    if F < 1 or T < 1:
        raise ValueError(f"need F >= 1 and T >= 1, got F={F}, T={T}")
    u = _uniforms(rng, n, F)
    return _kernels.sequential_draws(u, F, T)


def naive_sequential_sample(
    F: int, T: int, rng: np.random.Generator
) -> TimestepComposition:
    t = naive_sequential_samples(F, T, 1, rng)[0]
    return TimestepComposition(tuple(int(x) for x in t), T)


def composition_log_probability(c: TimestepComposition, tables: CountTables) -> float:
    """Log-probability of a composition under the anchored sampler.

    P(c) = 1/(F*T) * sum_f 1 / N(f, c_f), where N(f, tau) is the exact
    number of compositions with t_f = tau, i.e. d_end[f][tau]*d_start[f][tau].
    Evaluated with exact rational arithmetic before the final log.
    """
    F, T = tables.frames, tables.max_timestep
    if c.frames != F or c.max_timestep != T:
        raise ValueError(
            f"composition shaped for (F={c.frames}, T={c.max_timestep}) "
            f"does not match tables (F={F}, T={T})"
        )
    if min(c.timesteps) < 1:
        raise ValueError(f"entries must lie in [1, {T}], got {c.timesteps}")
    total = Fraction(0)
    for f in range(1, F + 1):
        tau = c.timesteps[f - 1]
        total += Fraction(1, tables.d_end[f][tau] * tables.d_start[f][tau])
    p = total / (F * T)
    return math.log(p.numerator) - math.log(p.denominator)


def save_count_tables(tables: CountTables, path: str | Path) -> None:
    """Write tables as magic, version, F, T, integer width, row-major counts."""
    width = 16
    if tables.overflow_flag:
        peak = max(tables.d_start[1][1], tables.d_end[tables.frames][tables.max_timestep])
        width = (peak.bit_length() + 7) // 8
    F, T = tables.frames, tables.max_timestep
    with open(path, "wb") as fh:
        fh.write(TABLES_MAGIC)
        fh.write(struct.pack("<IIII", TABLES_VERSION, F, T, width))
        for table in (tables.d_start, tables.d_end):
            for i in range(1, F + 1):
                for j in range(1, T + 1):
                    fh.write(table[i][j].to_bytes(width, "little"))


def _read_table(fh, path, F: int, T: int, width: int) -> list[list[int]]:
    table = [[0] * (T + 1) for _ in range(F + 1)]
    for i in range(1, F + 1):
        row = fh.read(width * T)
        if len(row) != width * T:
            raise ValueError(f"{path}: truncated table body")
        table[i][1:] = [
            int.from_bytes(row[j * width : (j + 1) * width], "little") for j in range(T)
        ]
    return table


def load_count_tables(path: str | Path) -> CountTables:
    with open(path, "rb") as fh:
        magic = fh.read(len(TABLES_MAGIC))
        if magic != TABLES_MAGIC:
            raise ValueError(f"{path}: not a count-tables file (bad magic {magic!r})")
        version, F, T, width = struct.unpack("<IIII", fh.read(16))
        if version != TABLES_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        d_start = _read_table(fh, path, F, T, width)
        d_end = _read_table(fh, path, F, T, width)
    # Cheap integrity checks instead of a full rebuild: the base rows are
    # all ones and both totals must equal the closed form.
    total = math.comb(T + F - 1, F)
    if (
        any(d_start[F][j] != 1 for j in range(1, T + 1))
        or any(d_end[1][j] != 1 for j in range(1, T + 1))
        or sum(d_start[1][1:]) != total
        or sum(d_end[F][1:]) != total
    ):
        raise ValueError(f"{path}: stored counts fail integrity checks")
    return _assemble(F, T, d_start, d_end)

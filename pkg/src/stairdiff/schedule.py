"""Per-frame diffusion mathematics.

Defines the discrete noise schedule and the four kernels every other module
builds on: forward corruption, noise inversion, the stochastic posterior
step, and the deterministic (eta=0) skip step.

Conventions used throughout:

    alpha_bar[0] = 1        timestep 0 means "clean"
    q(z_t | z_0) = N(sqrt(alpha_bar[t]) * z_0, (1 - alpha_bar[t]) * I)

so a frame corrupted to timestep t is

    z_t = sqrt(alpha_bar[t]) * z_0 + sqrt(1 - alpha_bar[t]) * eps.

All operations are pure functions of their arguments; noise is always
supplied by the caller so runs are bit-reproducible. Schedule coefficients
are computed and stored in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "build_linear_schedule",
    "corrupt_frame",
    "eps_from_x0",
    "posterior_step",
    "ddim_step",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete-time noise schedule over timesteps 1..T.

    Attributes:
        T: number of diffusion steps.
        betas: per-step noise rates, shape (T,), betas[i] is step i+1.
        alphas: 1 - betas, shape (T,).
        alpha_bars: cumulative products, shape (T+1,), indexed by timestep
            so that alpha_bars[0] == 1 and alpha_bars[t] == prod(alphas[:t]).
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"need at least one timestep, got T={self.T}")
        if self.betas.shape != (self.T,) or self.alpha_bars.shape != (self.T + 1,):
            raise ValueError("schedule array shapes do not match T")
        if not (np.all(self.betas > 0.0) and np.all(self.betas < 1.0)):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if not np.all(np.diff(self.alpha_bars) < 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")

    def alpha_bar(self, t: int) -> float:
        """alpha_bar at integer timestep t in [0, T]."""
        self._check_t(t, low=0)
        return float(self.alpha_bars[t])

    def _check_t(self, t: int, low: int) -> None:
        if not (low <= t <= self.T):
            raise ValueError(f"timestep {t} outside [{low}, {self.T}]")


def build_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Build a schedule with betas linearly spaced from beta_start to beta_end.

    Endpoints are hit exactly: betas[0] == beta_start and betas[T-1] == beta_end.
    """
    if T < 1:
        raise ValueError(f"need at least one timestep, got T={T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.empty(T + 1, dtype=np.float64)
    alpha_bars[0] = 1.0
    alpha_bars[1:] = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _check_shapes(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"mismatched array shapes: {sorted(shapes)}")


def corrupt_frame(
    z0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """Corrupt a clean frame to timestep t: sqrt(ab_t)*z0 + sqrt(1-ab_t)*eps.

    t = 0 returns z0 unchanged (alpha_bar[0] == 1).
    """
    sched._check_t(t, low=0)
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_shapes(z0, eps)
    ab = sched.alpha_bars[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def eps_from_x0(
    z_t: np.ndarray, x0_hat: np.ndarray, t: int, sched: NoiseSchedule
) -> np.ndarray:
    """Invert the corruption: recover the noise that maps x0_hat to z_t.

    Requires t >= 1; at t = 0 the noise scale is zero and the noise is
    unidentifiable.
    """
    sched._check_t(t, low=1)
    z_t = np.asarray(z_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    _check_shapes(z_t, x0_hat)
    ab = sched.alpha_bars[t]
    return (z_t - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)


def posterior_step(
    z_t: np.ndarray,
    x0_hat: np.ndarray,
    t: int,
    noise: np.ndarray,
    sched: NoiseSchedule,
) -> np.ndarray:
    """One stochastic reverse step from t to t-1.

    Samples from the posterior q(z_{t-1} | z_t, x0_hat):

        mean = (z_t - beta_t / sqrt(1 - ab_t) * eps_t) / sqrt(alpha_t)
        var  = (1 - ab_{t-1}) / (1 - ab_t) * beta_t

    with eps_t recovered via eps_from_x0. The t = 1 step has zero variance
    and its mean reduces algebraically to x0_hat; it is returned directly so
    the identity holds exactly in floating point.
    """
    sched._check_t(t, low=1)
    z_t = np.asarray(z_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _check_shapes(z_t, x0_hat, noise)
    if t == 1:
        return x0_hat.copy()
    alpha_t = sched.alphas[t - 1]
    beta_t = sched.betas[t - 1]
    ab_t = sched.alpha_bars[t]
    ab_prev = sched.alpha_bars[t - 1]
    eps = eps_from_x0(z_t, x0_hat, t, sched)
    mean = (z_t - beta_t / np.sqrt(1.0 - ab_t) * eps) / np.sqrt(alpha_t)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return mean + np.sqrt(var) * noise


def ddim_step(
    z_t: np.ndarray,
    x0_hat: np.ndarray,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Deterministic skip step from t down to t_prev (eta = 0).

    Re-corrupts x0_hat to t_prev along the noise direction implied by z_t:

        z_{t_prev} = sqrt(ab_{t_prev}) * x0_hat
                     + sqrt(1 - ab_{t_prev}) * eps_from_x0(z_t, x0_hat, t)

    t_prev = 0 returns x0_hat exactly. Any 0 <= t_prev < t <= T is valid, so
    a single call can span several timesteps.
    """
    sched._check_t(t, low=1)
    if not (0 <= t_prev < t):
        raise ValueError(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    eps = eps_from_x0(z_t, x0_hat, t, sched)
    ab_prev = sched.alpha_bars[t_prev]
    return np.sqrt(ab_prev) * np.asarray(x0_hat, dtype=np.float64) + np.sqrt(
        1.0 - ab_prev
    ) * eps

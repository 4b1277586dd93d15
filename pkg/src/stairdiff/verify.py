"""Independent oracles and statistical checks.

Everything here exists to check the rest of the package from a second
angle: exhaustive enumeration instead of DP counting, Pearson chi-square
tests instead of trusting a sampler, central finite differences instead of
the hand-written backward pass, and directly-constructed reference plans
for the two limiting trajectory schedules. The test suite and the CLI
`verify` command are the consumers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stairdiff import denoiser as dn
from stairdiff.lattice import TimestepComposition
from stairdiff.schedule import NoiseSchedule
from stairdiff.trajectory import TrajectoryPlan, TrajectoryStep, build_grid_map

__all__ = [
    "EnumerationResult",
    "enumerate_compositions",
    "chi_square_uniformity",
    "finite_diff_grads",
    "equal_constraint_samples",
    "independent_samples",
    "synchronous_reference_plan",
    "autoregressive_reference_plan",
    "CheckResult",
    "run_suite",
    "SUITES",
]

ENUMERATION_CAP = 10**7


@dataclass(frozen=True)
class EnumerationResult:
    constraint: str
    tuples: list[tuple[int, ...]]  # lexicographically sorted, duplicate-free
    max_timestep: int
    count: int

    @property
    def compositions(self) -> list[TimestepComposition]:
        # valid for the monotone constraints; "independent" tuples may
        # violate the composition invariant and stay raw
        return [TimestepComposition(t, self.max_timestep) for t in self.tuples]


def _count_for(F: int, T: int, constraint: str) -> int:
    if constraint == "equal":
        return T
    if constraint == "independent":
        return T**F
    if constraint == "non_decreasing":
        return math.comb(T + F - 1, F)
    raise ValueError(f"unknown constraint {constraint!r}")


def enumerate_compositions(F: int, T: int, constraint: str) -> EnumerationResult:
    """Exhaustively list compositions with entries in [1, T].

    constraint is one of "equal", "independent", "non_decreasing". Refuses
    (rather than truncates) when the count exceeds the enumeration cap.
    """
    if F < 1 or T < 1:
        raise ValueError(f"need F >= 1 and T >= 1, got F={F}, T={T}")
    expected = _count_for(F, T, constraint)
    if expected > ENUMERATION_CAP:
        raise ValueError(
            f"enumeration of {expected} compositions exceeds cap {ENUMERATION_CAP}"
        )
    out: list[tuple[int, ...]] = []
    if constraint == "equal":
        out = [(t,) * F for t in range(1, T + 1)]
    elif constraint == "independent":
        def rec_all(prefix: tuple[int, ...]):
            if len(prefix) == F:
                out.append(prefix)
                return
            for t in range(1, T + 1):
                rec_all(prefix + (t,))
        rec_all(())
    else:
        def rec_nd(prefix: tuple[int, ...], lo: int):
            if len(prefix) == F:
                out.append(prefix)
                return
            for t in range(lo, T + 1):
                rec_nd(prefix + (t,), t)
        rec_nd((), 1)
    assert len(out) == expected, f"enumeration bug: {len(out)} != {expected}"
    tuples = sorted(out)
    assert len(set(tuples)) == len(tuples)
    return EnumerationResult(
        constraint=constraint, tuples=tuples, max_timestep=T, count=len(tuples)
    )


# Pearson chi-square critical values at the 99.9% level, dof 1..200,
# precomputed from the inverse survival function of the chi-square
# distribution and frozen here so runtime needs no special functions.
_CHI2_CRIT_999 = np.array([
    10.827566, 13.815511, 16.266236, 18.466827, 20.515006, 22.457744, 24.321886,
    26.124482, 27.877165, 29.588298, 31.264134, 32.909490, 34.528179, 36.123274,
    37.697298, 39.252355, 40.790217, 42.312396, 43.820196, 45.314747, 46.797038,
    48.267942, 49.728232, 51.178598, 52.619656, 54.051962, 55.476020, 56.892285,
    58.301173, 59.703064, 61.098306, 62.487219, 63.870099, 65.247217, 66.618829,
    67.985168, 69.346452, 70.702887, 72.054663, 73.401958, 74.744938, 76.083763,
    77.418578, 78.749524, 80.076732, 81.400326, 82.720423, 84.037134, 85.350565,
    86.660815, 87.967980, 89.272151, 90.573412, 91.871847, 93.167533, 94.460545,
    95.750954, 97.038829, 98.324234, 99.607233, 100.887885, 102.166248, 103.442377,
    104.716325, 105.988143, 107.257880, 108.525582, 109.791296, 111.055066,
    112.316932, 113.576936, 114.835117, 116.091513, 117.346161, 118.599095,
    119.850350, 121.099959, 122.347954, 123.594366, 124.839224, 126.082558,
    127.324397, 128.564766, 129.803693, 131.041204, 132.277323, 133.512074,
    134.745481, 135.977567, 137.208354, 138.437864, 139.666117, 140.893134,
    142.118935, 143.343540, 144.566966, 145.789233, 147.010358, 148.230359,
    149.449253, 150.667056, 151.883784, 153.099453, 154.314080, 155.527677,
    156.740261, 157.951845, 159.162444, 160.372071, 161.580740, 162.788463,
    163.995253, 165.201123, 166.406085, 167.610151, 168.813332, 170.015640,
    171.217086, 172.417682, 173.617436, 174.816361, 176.014467, 177.211763,
    178.408259, 179.603965, 180.798891, 181.993045, 183.186437, 184.379076,
    185.570970, 186.762129, 187.952559, 189.142271, 190.331271, 191.519567,
    192.707169, 193.894082, 195.080315, 196.265875, 197.450770, 198.635005,
    199.818590, 201.001529, 202.183831, 203.365501, 204.546546, 205.726973,
    206.906787, 208.085996, 209.264605, 210.442620, 211.620047, 212.796891,
    213.973160, 215.148857, 216.323989, 217.498561, 218.672578, 219.846046,
    221.018970, 222.191355, 223.363205, 224.534526, 225.705324, 226.875601,
    228.045364, 229.214616, 230.383363, 231.551609, 232.719359, 233.886616,
    235.053385, 236.219670, 237.385476, 238.550806, 239.715665, 240.880057,
    242.043985, 243.207454, 244.370467, 245.533029, 246.695142, 247.856811,
    249.018039, 250.178830, 251.339187, 252.499114, 253.658615, 254.817692,
    255.976349, 257.134589, 258.292416, 259.449833, 260.606843, 261.763449,
    262.919654, 264.075461, 265.230874, 266.385895, 267.540528,
])


def chi_square_critical_999(dof: int) -> float:
    if not (1 <= dof <= len(_CHI2_CRIT_999)):
        raise ValueError(f"critical values tabulated for dof 1..200, got {dof}")
    return float(_CHI2_CRIT_999[dof - 1])


def chi_square_uniformity(
    observed: np.ndarray, expected: np.ndarray
) -> tuple[float, int, bool]:
    """Pearson goodness-of-fit test against the 99.9% critical value.

    observed: integer counts per cell; expected: probabilities summing to 1.
    Every expected cell count must be at least 5 for the asymptotics to
    hold. Returns (statistic, dof, reject_at_999).
    """
    observed = np.asarray(observed, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if observed.shape != expected.shape or observed.ndim != 1:
        raise ValueError("observed and expected must be 1-D arrays of equal length")
    if abs(expected.sum() - 1.0) > 1e-9:
        raise ValueError(f"expected probabilities sum to {expected.sum()}, not 1")
    n = observed.sum()
    cell = expected * n
    if cell.min() < 5.0:
        raise ValueError(
            f"under-populated cell: min expected count {cell.min():.3f} < 5"
        )
    stat = float(((observed - cell) ** 2 / cell).sum())
    dof = observed.size - 1
    return stat, dof, stat > chi_square_critical_999(dof)


def finite_diff_grads(
    params: dn.DenoiserParams,
    config: dn.DenoiserConfig,
    z0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    sched: NoiseSchedule,
    step: float = 1e-4,
) -> dn.DenoiserParams:
    """Central-difference gradients of the denoiser loss, scalar by scalar."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    out: dn.DenoiserParams = {}
    work = {k: v.copy() for k, v in params.items()}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = dn.loss_only(work, config, z0, t, eps, sched)
            flat[i] = orig - step
            lo = dn.loss_only(work, config, z0, t, eps, sched)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        out[name] = g
    return out


def equal_constraint_samples(F: int, T: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Baseline: one shared timestep per composition (synchronous training)."""
    t = rng.integers(1, T + 1, size=n)
    return np.repeat(t[:, None], F, axis=1)


def independent_samples(F: int, T: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Baseline: every frame's timestep drawn independently (no constraint)."""
    return rng.integers(1, T + 1, size=(n, F))


def synchronous_reference_plan(F: int, N: int, T: int | None = None) -> TrajectoryPlan:
    """All frames share one level per step: N-1, N-2, ..., 0."""
    steps = []
    for level in range(N - 1, -1, -1):
        comp = TimestepComposition((level,) * F, N)
        steps.append(TrajectoryStep(composition=comp, update_mask=(True,) * F))
    return TrajectoryPlan(
        frames=F, grid_steps=N, offset=0,
        grid_map=build_grid_map(N, N if T is None else T), steps=tuple(steps),
    )


def autoregressive_reference_plan(F: int, N: int, T: int | None = None) -> TrajectoryPlan:
    """Frames finish one at a time: frame 1 walks N-1..0, then frame 2, ..."""
    steps = []
    state = [N] * F
    for f in range(F):
        for level in range(N - 1, -1, -1):
            state[f] = level
            mask = tuple(i == f for i in range(F))
            steps.append(
                TrajectoryStep(
                    composition=TimestepComposition(tuple(state), N), update_mask=mask
                )
            )
    return TrajectoryPlan(
        frames=F, grid_steps=N, offset=N,
        grid_map=build_grid_map(N, N if T is None else T), steps=tuple(steps),
    )


# ---------------------------------------------------------------------------
# Named verification suites backing the CLI `verify` command. Each check
# returns a CheckResult; a suite passes when all its checks do.


@dataclass(frozen=True)
class CheckResult:
    name: str
    statistic: float
    threshold: float
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name:<52s} stat={self.statistic:<12.6g} limit={self.threshold:<12.6g} {verdict}"


def _check(name: str, statistic: float, threshold: float) -> CheckResult:
    return CheckResult(name, float(statistic), float(threshold), statistic <= threshold)


def _suite_schedule(seed: int) -> list[CheckResult]:
    from stairdiff import schedule as sc

    rng = np.random.default_rng(seed)
    sched = sc.build_linear_schedule(10, 0.02, 0.3)
    results = []
    rec = np.abs(
        sched.alpha_bars[1:] / sched.alpha_bars[:-1] - (1.0 - sched.betas)
    ) / (1.0 - sched.betas)
    results.append(_check("schedule: cumulative-product recurrence", rec.max(), 1e-12))
    z0 = rng.standard_normal((4, 3))
    x0 = rng.standard_normal((4, 3))
    zt = rng.standard_normal((4, 3))
    results.append(
        _check(
            "schedule: posterior step at t=1 returns the prediction",
            np.abs(sc.posterior_step(zt, x0, 1, np.zeros_like(zt), sched) - x0).max(),
            0.0,
        )
    )
    worst = 0.0
    eps = rng.standard_normal(z0.shape)
    for t in range(1, sched.T + 1):
        z_t = sc.corrupt_frame(z0, t, eps, sched)
        for tp in range(0, t):
            lhs = sc.ddim_step(z_t, z0, t, tp, sched)
            rhs = sc.corrupt_frame(z0, tp, eps, sched)
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    results.append(_check("schedule: skip step matches re-corruption", worst, 1e-6))
    var_err = 0.0
    n = 10**5
    draws = rng.standard_normal((n, 1, 1))
    for t in (1, 5, 10):
        out = sc.corrupt_frame(np.zeros((n, 1, 1)), t, draws, sched)
        target = 1.0 - sched.alpha_bars[t]
        sd = target * np.sqrt(2.0 / (n - 1))  # sampling sd of the variance
        var_err = max(var_err, abs(float(out.var(ddof=1)) - target) / (3.0 * sd))
    results.append(_check("schedule: corruption variance (3-sigma units)", var_err, 1.0))
    return results


def _suite_lattice(seed: int) -> list[CheckResult]:
    from stairdiff import lattice as lat

    rng = np.random.default_rng(seed)
    results = []
    worst = 0
    for F in range(1, 9):
        for T in range(1, 9):
            got = lat.count_compositions(F, T)
            want = enumerate_compositions(F, T, "non_decreasing").count
            worst = max(worst, abs(got - want))
    results.append(_check("lattice: DP count matches enumeration (F,T<=8)", worst, 0))
    flagship = lat.count_compositions(16, 1000)
    results.append(
        _check(
            "lattice: closed form agrees at F=16, T=1000",
            abs(flagship - math.comb(1015, 16)),
            0,
        )
    )
    F, T = 3, 3
    tables = lat.build_count_tables(F, T)
    comps = enumerate_compositions(F, T, "non_decreasing").compositions
    mass = sum(math.exp(lat.composition_log_probability(c, tables)) for c in comps)
    results.append(_check("lattice: mixture law normalizes", abs(mass - 1.0), 1e-12))
    n = 200_000
    draws = lat.sample_compositions(tables, n, rng)
    binc = np.bincount(draws[:, 0] * 16 + draws[:, 1] * 4 + draws[:, 2], minlength=64)
    observed = np.array(
        [binc[c.timesteps[0] * 16 + c.timesteps[1] * 4 + c.timesteps[2]] for c in comps]
    )
    expected = np.array(
        [math.exp(lat.composition_log_probability(c, tables)) for c in comps]
    )
    stat, dof, reject = chi_square_uniformity(observed, expected)
    results.append(
        _check(
            f"lattice: sampled frequencies vs mixture law (chi2, dof={dof})",
            stat,
            chi_square_critical_999(dof),
        )
    )
    nd = np.all(np.diff(draws, axis=1) >= 0)
    results.append(_check("lattice: all samples non-decreasing", 0.0 if nd else 1.0, 0.0))
    return results


def _suite_trajectory(seed: int) -> list[CheckResult]:
    from stairdiff import trajectory as tj

    results = []
    worst = 0
    for F in range(1, 9):
        for N in range(1, 21):
            for s in range(0, N + 3):
                plan = tj.plan_trajectory(F, N, s)
                want = N + (F - 1) * min(s, N)
                worst = max(worst, abs(len(plan) - want))
    results.append(_check("trajectory: closed-form step count (F<=8, N<=20)", worst, 0))
    sync_diff = 0
    for F, N in ((3, 4), (5, 7), (16, 50)):
        plan = tj.plan_trajectory(F, N, 0)
        ref = synchronous_reference_plan(F, N)
        sync_diff += sum(
            a.composition != b.composition or a.update_mask != b.update_mask
            for a, b in zip(plan.steps, ref.steps)
        ) + abs(len(plan) - len(ref))
    results.append(_check("trajectory: offset 0 equals synchronous plan", sync_diff, 0))
    ar_diff = 0
    for F, N in ((2, 3), (4, 6)):
        plan = tj.plan_trajectory(F, N, N)
        ref = autoregressive_reference_plan(F, N)
        ar_diff += sum(
            a.composition != b.composition or a.update_mask != b.update_mask
            for a, b in zip(plan.steps, ref.steps)
        ) + abs(len(plan) - len(ref))
    results.append(_check("trajectory: offset N equals frame-by-frame plan", ar_diff, 0))
    return results


def _suite_denoiser(seed: int) -> list[CheckResult]:
    from stairdiff import schedule as sc

    rng = np.random.default_rng(seed)
    cfg = dn.DenoiserConfig(frames=3, tokens=2, dim=2, d_model=8, n_layers=1, n_heads=2)
    sched = sc.build_linear_schedule(6, 0.05, 0.3)
    params = dn.init_params(cfg, sched.T, rng)
    params["w_out"] = rng.uniform(-0.5, 0.5, size=params["w_out"].shape)
    z0 = rng.standard_normal((1, 3, 2, 2)) * 0.5
    t = np.array([[2, 3, 5]])
    eps = rng.standard_normal(z0.shape)
    _, grads = dn.loss_and_grad(params, cfg, z0, t, eps, sched)
    fd = finite_diff_grads(params, cfg, z0, t, eps, sched)
    worst = 0.0
    for name in params:
        denom = max(np.linalg.norm(fd[name]), np.linalg.norm(grads[name]), 1e-12)
        worst = max(worst, float(np.linalg.norm(fd[name] - grads[name]) / denom))
    results = [_check("denoiser: analytic vs finite-difference gradients", worst, 1e-3)]
    z = rng.standard_normal((1, 3, 2, 2))
    base = dn.forward_batch(params, cfg, z, t)
    bumped = z.copy()
    bumped[0, 1] += 1.0
    pert = dn.forward_batch(params, cfg, bumped, t)
    leak = float(np.abs(pert[0, 0] - base[0, 0]).max())
    results.append(_check("denoiser: no influence of later frames on earlier", leak, 0.0))
    return results


def _suite_sampling(seed: int) -> list[CheckResult]:
    from stairdiff import sampling as sp
    from stairdiff import schedule as sc

    rng = np.random.default_rng(seed)
    sched = sc.build_linear_schedule(40, 0.01, 0.25)
    target = rng.standard_normal((4, 2, 3)) * 0.4
    cfg = sp.SampleConfig(
        frames=4, grid_steps=10, offset=0, mode="recorrupt_deterministic", seed=3
    )
    calls = []

    def oracle(z, t):
        calls.append(1)
        return target

    out = sp.generate_with(oracle, sched, cfg, np.random.default_rng(3), tokens=2, dim=3)
    err = float(np.abs(out.data - target / cfg.scale_factor).max())
    results = [_check("sampling: oracle chain recovers its target", err, 1e-5)]
    results.append(_check("sampling: model calls equal plan length", abs(len(calls) - 10), 0))
    return results


def _suite_training(seed: int) -> list[CheckResult]:
    from stairdiff import training as tr
    from stairdiff import schedule as sc

    spec = tr.SyntheticDatasetSpec(n_sequences=24, F=4, seed=seed)
    data = tr.make_synthetic_dataset(spec)
    cfg = tr.TrainConfig(steps=12, batch_size=4, seed=seed)
    dcfg = dn.DenoiserConfig(frames=4, tokens=1, dim=2, d_model=8, n_layers=1, n_heads=2)
    sched = sc.build_linear_schedule(20, 0.01, 0.2)
    res_a = tr.train(cfg, data, dcfg, sched)
    res_b = tr.train(cfg, data, dcfg, sched)
    drift = max(
        float(np.abs(res_a.params[k] - res_b.params[k]).max()) for k in res_a.params
    )
    results = [_check("training: bit-identical replay from the seed", drift, 0.0)]
    over = max(row.grad_norm_clipped for row in res_a.log) - cfg.grad_clip_norm
    results.append(_check("training: clipped gradient norm within bound", over, 1e-9))
    return results


SUITES = {
    "schedule": _suite_schedule,
    "lattice": _suite_lattice,
    "trajectory": _suite_trajectory,
    "denoiser": _suite_denoiser,
    "sampling": _suite_sampling,
    "training": _suite_training,
}

# shorthand: "scheduler" covers both timestep schedulers
ALIASES = {"scheduler": ("lattice", "trajectory"), "all": tuple(SUITES)}


def run_suite(name: str, seed: int = 0) -> list[CheckResult]:
    if name in ALIASES:
        out = []
        for key in ALIASES[name]:
            out.extend(SUITES[key](seed))
        return out
    if name not in SUITES:
        raise ValueError(
            f"unknown suite {name!r}; choose from {sorted(SUITES) + sorted(ALIASES)}"
        )
    return SUITES[name](seed)

import numpy as np
import pytest

from stairdiff import denoiser as dn
from stairdiff import sampling as sp
from stairdiff import schedule as sc
from stairdiff.trajectory import plan_trajectory


@pytest.fixture
def sched():
    return sc.build_linear_schedule(40, 0.005, 0.1)


def oracle_for(target, calls=None):
    def fn(z, t):
        if calls is not None:
            calls.append(t.copy())
        return target
    return fn


class TestGenerateWith:
    def test_oracle_chain_synchronous(self, sched, rng):
        # a denoiser that always answers the target must reproduce it
        target = 0.4 * rng.standard_normal((5, 2, 3))
        calls = []
        cfg = sp.SampleConfig(frames=5, grid_steps=10, offset=0, seed=1)
        out = sp.generate_with(
            oracle_for(target, calls), sched, cfg,
            np.random.default_rng(1), tokens=2, dim=3,
        )
        np.testing.assert_allclose(out.data, target / cfg.scale_factor, atol=1e-5)
        assert len(calls) == 10

    def test_oracle_chain_staggered_modes(self, sched, rng):
        target = 0.4 * rng.standard_normal((3, 1, 2))
        for mode in ("recorrupt_deterministic", "recorrupt_stochastic"):
            cfg = sp.SampleConfig(frames=3, grid_steps=8, offset=3, mode=mode, seed=2)
            out = sp.generate_with(
                oracle_for(target), sched, cfg, np.random.default_rng(2),
                tokens=1, dim=2,
            )
            np.testing.assert_allclose(out.data, target / 0.5, atol=1e-5)

    def test_call_count_equals_plan_length(self, sched):
        target = np.zeros((16, 1, 1))
        calls = []
        cfg = sp.SampleConfig(frames=16, grid_steps=25, offset=5, seed=0)
        sp.generate_with(
            oracle_for(target, calls), sched, cfg, np.random.default_rng(0),
            tokens=1, dim=1,
        )
        assert len(calls) == len(plan_trajectory(16, 25, 5)) == 25 + 15 * 5

    def test_transitions_audited_against_plan(self, sched, rng):
        cfg = sp.SampleConfig(frames=4, grid_steps=9, offset=2, seed=3)
        log = []
        sp.generate_with(
            oracle_for(0.1 * rng.standard_normal((4, 1, 2))), sched, cfg,
            np.random.default_rng(3), tokens=1, dim=2, transition_log=log,
        )
        plan = plan_trajectory(4, 9, 2, T=sched.T)
        levels = [9] * 4
        expected = []
        for idx, step in enumerate(plan.steps):
            for f in range(4):
                if step.update_mask[f]:
                    expected.append((idx, f, levels[f], step.composition.timesteps[f]))
            levels = list(step.composition.timesteps)
        assert log == expected

    def test_masked_frames_bitwise_unchanged(self, sched, rng):
        target = 0.3 * rng.standard_normal((4, 1, 2))
        cfg = sp.SampleConfig(frames=4, grid_steps=9, offset=9, seed=7)
        plan = plan_trajectory(4, 9, 9, T=sched.T)
        snapshots = []

        def capturing(z, t):
            snapshots.append(z.copy())
            return target

        sp.generate_with(capturing, sched, cfg, np.random.default_rng(7), tokens=1, dim=2)
        levels = [9] * 4
        for idx in range(1, len(snapshots)):
            mask = plan.steps[idx - 1].update_mask
            for f in range(4):
                if not mask[f]:
                    np.testing.assert_array_equal(
                        snapshots[idx][f], snapshots[idx - 1][f]
                    )

    def test_recorded_transitions_at_the_limits(self, sched, rng):
        # offset 0: every frame moves at every step; offset >= N: exactly
        # one frame moves per step, frames finishing strictly in order
        target = 0.2 * rng.standard_normal((4, 1, 2))
        sync_log, ar_log = [], []
        sp.generate_with(
            oracle_for(target), sched,
            sp.SampleConfig(frames=4, grid_steps=6, offset=0, seed=1),
            np.random.default_rng(1), tokens=1, dim=2, transition_log=sync_log,
        )
        assert len(sync_log) == 6 * 4
        for idx in range(6):
            moved = [rec[1] for rec in sync_log if rec[0] == idx]
            assert moved == [0, 1, 2, 3]
        sp.generate_with(
            oracle_for(target), sched,
            sp.SampleConfig(frames=4, grid_steps=6, offset=6, seed=1),
            np.random.default_rng(1), tokens=1, dim=2, transition_log=ar_log,
        )
        assert [rec[1] for rec in ar_log] == sorted(rec[1] for rec in ar_log)
        for idx in range(24):
            assert sum(1 for rec in ar_log if rec[0] == idx) == 1

    def test_seeded_stochastic_determinism(self, sched, rng):
        target = 0.2 * rng.standard_normal((3, 1, 2))
        cfg = sp.SampleConfig(
            frames=3, grid_steps=10, offset=4, mode="recorrupt_stochastic", seed=5
        )
        outs = [
            sp.generate_with(
                oracle_for(target), sched, cfg, np.random.default_rng(5),
                tokens=1, dim=2,
            ).data
            for _ in range(2)
        ]
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_posterior_oracle_chain_recovers_target(self, sched, rng):
        # the t=1 posterior step returns the prediction exactly, so an
        # oracle denoiser ends the full-grid walk on its target
        target = 0.3 * rng.standard_normal((3, 1, 2))
        cfg = sp.SampleConfig(frames=3, grid_steps=40, offset=0, mode="posterior", seed=9)
        out = sp.generate_with(
            oracle_for(target), sched, cfg, np.random.default_rng(9), tokens=1, dim=2
        )
        np.testing.assert_array_equal(out.data, target / cfg.scale_factor)

    def test_posterior_mode_needs_full_grid(self, sched, rng):
        cfg = sp.SampleConfig(frames=2, grid_steps=10, offset=0, mode="posterior")
        with pytest.raises(ValueError, match="N == T"):
            sp.generate_with(
                oracle_for(np.zeros((2, 1, 1))), sched, cfg,
                np.random.default_rng(0), tokens=1, dim=1,
            )
        full = sp.SampleConfig(frames=2, grid_steps=40, offset=0, mode="posterior")
        target = 0.3 * rng.standard_normal((2, 1, 1))
        out = sp.generate_with(
            oracle_for(target), sched, full, np.random.default_rng(0), tokens=1, dim=1
        )
        assert np.all(np.isfinite(out.data))

    def test_grid_above_schedule_rejected(self, sched):
        cfg = sp.SampleConfig(frames=2, grid_steps=41, offset=0)
        with pytest.raises(ValueError, match="exceeds schedule"):
            sp.generate_with(
                oracle_for(np.zeros((2, 1, 1))), sched, cfg,
                np.random.default_rng(0), tokens=1, dim=1,
            )

    def test_divergence_detected(self, sched):
        cfg = sp.SampleConfig(frames=2, grid_steps=10, offset=0)
        with pytest.raises(sp.GenerationDiverged):
            sp.generate_with(
                oracle_for(np.full((2, 1, 1), np.nan)), sched, cfg,
                np.random.default_rng(0), tokens=1, dim=1,
            )


class TestGenerateWithModel:
    def test_model_path_deterministic_across_modes(self, sched, rng):
        dcfg = dn.DenoiserConfig(frames=3, tokens=1, dim=2, d_model=8, n_layers=1, n_heads=2)
        params = dn.init_params(dcfg, sched.T, rng)
        params["w_out"] = 0.1 * rng.standard_normal(params["w_out"].shape)
        for mode in ("recorrupt_deterministic", "recorrupt_stochastic"):
            for offset in (0, 2, 10):
                cfg = sp.SampleConfig(
                    frames=3, grid_steps=10, offset=offset, mode=mode, seed=6
                )
                a = sp.generate(params, dcfg, sched, cfg, np.random.default_rng(6))
                b = sp.generate(params, dcfg, sched, cfg, np.random.default_rng(6))
                np.testing.assert_array_equal(a.data, b.data)
                assert np.all(np.isfinite(a.data))

    def test_frame_mismatch_rejected(self, sched, rng):
        dcfg = dn.DenoiserConfig(frames=3, tokens=1, dim=2, d_model=8, n_layers=1, n_heads=2)
        params = dn.init_params(dcfg, sched.T, rng)
        cfg = sp.SampleConfig(frames=4, grid_steps=10, offset=0)
        with pytest.raises(ValueError):
            sp.generate(params, dcfg, sched, cfg, np.random.default_rng(0))


class TestSampleConfig:
    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            sp.SampleConfig(frames=2, grid_steps=5, offset=0, mode="midjourney")

    def test_rejects_bad_numbers(self):
        with pytest.raises(ValueError):
            sp.SampleConfig(frames=0, grid_steps=5, offset=0)
        with pytest.raises(ValueError):
            sp.SampleConfig(frames=2, grid_steps=5, offset=-1)
        with pytest.raises(ValueError):
            sp.SampleConfig(frames=2, grid_steps=5, offset=0, scale_factor=0.0)

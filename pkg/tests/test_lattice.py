import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stairdiff import lattice as lat
from stairdiff.verify import chi_square_uniformity, enumerate_compositions


def brute_force_suffix_counts(F, T):
    """Oracle for d_start: count non-decreasing suffixes by enumeration."""
    table = [[0] * (T + 1) for _ in range(F + 1)]
    def count(i, j):
        if i == F:
            return 1
        return sum(count(i + 1, k) for k in range(j, T + 1))
    for i in range(1, F + 1):
        for j in range(1, T + 1):
            table[i][j] = count(i, j)
    return table


class TestComposition:
    def test_validates_monotonicity(self):
        lat.TimestepComposition((1, 2, 2), 3)
        with pytest.raises(ValueError):
            lat.TimestepComposition((2, 1), 3)
        with pytest.raises(ValueError):
            lat.TimestepComposition((1, 4), 3)
        with pytest.raises(ValueError):
            lat.TimestepComposition((), 3)

    def test_allows_clean_frames(self):
        c = lat.TimestepComposition((0, 0, 2), 3)
        assert c.frames == 3


class TestCounting:
    def test_fig_setting(self):
        # brute force over {1,2,3}^3 filtered to non-decreasing triples
        triples = [
            (a, b, c)
            for a in range(1, 4)
            for b in range(1, 4)
            for c in range(1, 4)
            if a <= b <= c
        ]
        assert len(triples) == 10
        assert lat.count_compositions(3, 3) == 10

    def test_single_frame(self):
        for T in (1, 7, 100):
            assert lat.count_compositions(1, T) == T

    def test_flagship_exact(self):
        got = lat.count_compositions(16, 1000)
        assert got == math.comb(1015, 16)
        assert got == 53855312085464377672249158113395375

    def test_dp_equals_closed_form_exhaustively(self):
        # count_compositions raises internally if DP and binomial disagree
        for F in range(1, 31):
            for T in range(1, 31):
                assert lat.count_compositions(F, T) == math.comb(T + F - 1, F)
        assert lat.count_compositions(16, 1000) == math.comb(1015, 16)

    def test_rejects_zero_dimensions(self):
        with pytest.raises(ValueError):
            lat.count_compositions(0, 3)
        with pytest.raises(ValueError):
            lat.build_count_tables(3, 0)


class TestCountTables:
    def test_small_rows_against_brute_force(self):
        tables = lat.build_count_tables(3, 3)
        assert tables.d_start[3][1:] == [1, 1, 1]
        assert tables.d_start[2][1:] == [3, 2, 1]
        assert tables.d_start[1][1:] == [6, 3, 1]
        assert sum(tables.d_start[1][1:]) == 10
        oracle = brute_force_suffix_counts(4, 5)
        assert lat.build_count_tables(4, 5).d_start == oracle

    def test_degenerate_single_timestep(self):
        tables = lat.build_count_tables(5, 1)
        for i in range(1, 6):
            assert tables.d_start[i][1] == 1
            assert tables.d_end[i][1] == 1

    def test_prefix_rows(self):
        tables = lat.build_count_tables(2, 2)
        assert tables.d_end[2][1:] == [1, 2]
        assert sum(tables.d_end[2][1:]) == lat.count_compositions(2, 2)

    def test_row_sums_and_positivity(self):
        # both tables total to the composition count, and no cell is ever 0
        for F, T in ((1, 1), (3, 3), (5, 8), (16, 100)):
            tables = lat.build_count_tables(F, T)
            total = math.comb(T + F - 1, F)
            assert sum(tables.d_start[1][1:]) == total
            assert sum(tables.d_end[F][1:]) == total
            assert all(
                tables.d_start[i][j] >= 1 and tables.d_end[i][j] >= 1
                for i in range(1, F + 1)
                for j in range(1, T + 1)
            )

    def test_overflow_flag(self):
        assert lat.build_count_tables(16, 1000).overflow_flag is False
        wide = lat.build_count_tables(70, 70)
        assert wide.overflow_flag is True
        assert max(wide.d_start[1][1:]) > 2**127

    def test_serialization_roundtrip(self, tmp_path):
        for F, T in ((3, 3), (16, 40), (70, 70)):
            tables = lat.build_count_tables(F, T)
            path = tmp_path / f"tables_{F}_{T}.bin"
            lat.save_count_tables(tables, path)
            loaded = lat.load_count_tables(path)
            assert loaded.d_start == tables.d_start
            assert loaded.d_end == tables.d_end
            assert loaded.overflow_flag == tables.overflow_flag
            np.testing.assert_array_equal(loaded._cum_end, tables._cum_end)

    def test_load_rejects_corruption(self, tmp_path):
        tables = lat.build_count_tables(3, 4)
        path = tmp_path / "tables.bin"
        lat.save_count_tables(tables, path)
        raw = bytearray(path.read_bytes())
        raw[30] ^= 0xFF  # flip a count byte
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            lat.load_count_tables(path)
        with pytest.raises(ValueError):
            lat.load_count_tables(__file__)


class TestAnchoredSampler:
    def test_forced_anchor_corners(self, rng):
        # with F=2, T=2 the anchor fully determines two of the corners:
        # (f=1, t=2) forces <2,2>; (f=2, t=1) forces <1,1>
        tables = lat.build_count_tables(2, 2)
        draws, f, tau = lat.sample_compositions(tables, 4000, rng, return_anchors=True)
        top = draws[(f == 1) & (tau == 2)]
        assert len(top) > 0 and np.all(top == 2)
        bottom = draws[(f == 2) & (tau == 1)]
        assert len(bottom) > 0 and np.all(bottom == 1)

    def test_forced_anchor_split(self, rng):
        # anchor (f=1, t=1) leaves <1,1> and <1,2> equally likely
        tables = lat.build_count_tables(2, 2)
        draws, f, tau = lat.sample_compositions(tables, 50_000, rng, return_anchors=True)
        sel = draws[(f == 1) & (tau == 1)]
        assert len(sel) >= 10_000
        frac = (sel[:, 1] == 2).mean()
        assert frac == pytest.approx(0.5, abs=0.02)

    def test_single_draw_is_valid(self, rng):
        tables = lat.build_count_tables(5, 7)
        c = lat.sample_composition(tables, rng)
        assert c.frames == 5 and 1 <= min(c.timesteps) and max(c.timesteps) <= 7

    @given(F=st.integers(1, 8), T=st.integers(1, 12), seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_samples_always_non_decreasing(self, F, T, seed):
        tables = lat.build_count_tables(F, T)
        draws = lat.sample_compositions(tables, 64, np.random.default_rng(seed))
        assert np.all(np.diff(draws, axis=1) >= 0)
        assert draws.min() >= 1 and draws.max() <= T

    def test_anchor_marginals_uniform(self, rng):
        F, T = 3, 4
        tables = lat.build_count_tables(F, T)
        n = 120_000
        _, f, tau = lat.sample_compositions(tables, n, rng, return_anchors=True)
        p = 1.0 / (F * T)
        sigma = math.sqrt(p * (1 - p) / n)
        for ff in range(1, F + 1):
            for tt in range(1, T + 1):
                freq = ((f == ff) & (tau == tt)).mean()
                assert abs(freq - p) < 3 * sigma

    def test_conditional_uniformity_chi_square(self):
        # for each anchor, draws conditioned on it must be uniform over the
        # enumerated compositions passing through that anchor
        F, T = 3, 4
        tables = lat.build_count_tables(F, T)
        comps = enumerate_compositions(F, T, "non_decreasing").compositions
        rng = np.random.default_rng(99)
        n = 260_000
        draws, f, tau = lat.sample_compositions(tables, n, rng, return_anchors=True)
        for ff in range(1, F + 1):
            for tt in range(1, T + 1):
                sel = draws[(f == ff) & (tau == tt)]
                support = [c for c in comps if c.timesteps[ff - 1] == tt]
                if len(support) == 1:
                    assert np.all(sel == np.array(support[0].timesteps))
                    continue
                keys = {c.timesteps: i for i, c in enumerate(support)}
                observed = np.zeros(len(support))
                for row in map(tuple, sel.tolist()):
                    observed[keys[row]] += 1
                expected = np.full(len(support), 1.0 / len(support))
                stat, dof, reject = chi_square_uniformity(observed, expected)
                assert not reject, f"anchor ({ff},{tt}): chi2={stat:.1f} dof={dof}"

    def test_mixture_law_normalizes(self):
        tables = lat.build_count_tables(3, 3)
        comps = enumerate_compositions(3, 3, "non_decreasing").compositions
        total = sum(math.exp(lat.composition_log_probability(c, tables)) for c in comps)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_remap_clean_flag(self):
        tables = lat.build_count_tables(3, 2)
        rng = np.random.default_rng(5)
        seen_zero = 0
        for _ in range(300):
            c = lat.sample_composition(tables, rng, remap_clean=True)
            assert all(a <= b for a, b in zip(c.timesteps, c.timesteps[1:]))
            if 0 in c.timesteps:
                seen_zero += 1
                # all-or-none: no 1s may remain alongside a 0
                assert 1 not in c.timesteps
        assert seen_zero > 0
        rng = np.random.default_rng(5)
        for _ in range(300):
            assert 0 not in lat.sample_composition(tables, rng).timesteps


class TestLogProbability:
    def test_single_frame_uniform(self):
        tables = lat.build_count_tables(1, 3)
        c = lat.TimestepComposition((2,), 3)
        assert lat.composition_log_probability(c, tables) == pytest.approx(math.log(1 / 3))

    def test_two_frame_value(self):
        # P(<1,2>) = (1/4) * (1/N(1,1) + 1/N(2,2)) with N(1,1) = N(2,2) = 2
        tables = lat.build_count_tables(2, 2)
        c = lat.TimestepComposition((1, 2), 2)
        assert math.exp(lat.composition_log_probability(c, tables)) == pytest.approx(0.25)

    def test_rejects_clean_entries_and_shape_mismatch(self):
        tables = lat.build_count_tables(2, 2)
        with pytest.raises(ValueError):
            lat.composition_log_probability(lat.TimestepComposition((0, 1), 2), tables)
        with pytest.raises(ValueError):
            lat.composition_log_probability(lat.TimestepComposition((1, 1, 1), 2), tables)

    def test_huge_lattice_log_prob_is_finite(self):
        tables = lat.build_count_tables(16, 1000)
        c = lat.TimestepComposition((1000,) * 16, 1000)
        lp = lat.composition_log_probability(c, tables)
        assert math.isfinite(lp)


class TestNaiveSampler:
    def test_single_frame_uniform(self, rng):
        draws = lat.naive_sequential_samples(1, 5, 50_000, rng)
        counts = np.bincount(draws[:, 0], minlength=6)[1:]
        expected = np.full(5, 0.2)
        stat, dof, reject = chi_square_uniformity(counts, expected)
        assert not reject

    def test_all_top_probability(self, rng):
        # t1 = T forces the whole composition to T, so P(all-T) = 1/T
        F, T, n = 2, 1000, 10**6
        draws = lat.naive_sequential_samples(F, T, n, rng)
        hits = np.all(draws == T, axis=1).sum()
        p = 1.0 / T
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(hits / n - p) < 3 * sigma

    def test_biased_away_from_mixture(self, rng):
        # total-variation gap to the anchored sampler's law on F=3, T=3
        tables = lat.build_count_tables(3, 3)
        comps = enumerate_compositions(3, 3, "non_decreasing").compositions
        n = 100_000
        draws = lat.naive_sequential_samples(3, 3, n, rng)
        keys = {c.timesteps: i for i, c in enumerate(comps)}
        freq = np.zeros(len(comps))
        for row in map(tuple, draws.tolist()):
            freq[keys[row]] += 1.0 / n
        mixture = np.array(
            [math.exp(lat.composition_log_probability(c, tables)) for c in comps]
        )
        tv = 0.5 * np.abs(freq - mixture).sum()
        assert tv > 0.05

    def test_always_valid(self, rng):
        draws = lat.naive_sequential_samples(6, 9, 2000, rng)
        assert np.all(np.diff(draws, axis=1) >= 0)
        assert draws.min() >= 1 and draws.max() <= 9

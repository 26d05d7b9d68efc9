import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msquant import (
    FloatMatrix,
    ShapeError,
    bias_correction,
    build_ladder,
    build_plan,
    classify_channel,
    matmul_float,
    quantize_activation,
    quantize_weight,
)
from msquant.planio import dumps_plan, load_plan, loads_plan, dump_plan

from conftest import plan_from_cmax
from oracles import calibrate_scalar

SIX_CHANNEL_CMAX = [4.0, 22.4, 5.0, 9.0, 3.0, 7.0]  # channel 2 carries the maximum


# ------------------------------------------------------------- ladders

class TestLadder:
    def test_three_group_ladder(self):
        ladder = build_ladder(22.4, 2, 3, 8)
        assert ladder.scales.tolist() == [22.4 / 127, 11.2 / 127, 5.6 / 127]

    def test_single_group_recovers_per_tensor(self):
        ladder = build_ladder(5.0, 2, 1, 8)
        assert ladder.scales.tolist() == [5.0 / 127]

    def test_zero_tmax_degenerate(self):
        ladder = build_ladder(0.0, 2, 4, 8)
        assert ladder.scales.tolist() == [1.0, 1.0, 1.0, 1.0]

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            build_ladder(1.0, 1, 3, 8)
        with pytest.raises(ValueError):
            build_ladder(1.0, 2, 0, 8)
        with pytest.raises(ValueError):
            build_ladder(1.0, 2, 3, 5)
        with pytest.raises(ValueError):
            build_ladder(-1.0, 2, 3, 8)

    @given(
        st.floats(min_value=1e-6, max_value=1e6),
        st.integers(1, 16),
        st.sampled_from([4, 8, 16]),
    )
    @settings(max_examples=200, deadline=None)
    def test_alpha2_ratio_exact(self, tmax, groups, bits):
        ladder = build_ladder(tmax, 2, groups, bits)
        s = ladder.scales
        assert np.all(s[:-1] / s[1:] == 2.0)
        assert s[0] == tmax / (2 ** (bits - 1) - 1)
        assert np.all(np.diff(s) < 0) or groups == 1

    @given(
        st.floats(min_value=1e-6, max_value=1e6),
        st.integers(3, 5),
        st.integers(2, 10),
    )
    @settings(max_examples=100, deadline=None)
    def test_general_alpha_ratio_near_exact(self, tmax, alpha, groups):
        # non-power-of-two ratios hold to float rounding, not bit-exactly
        s = build_ladder(tmax, alpha, groups, 8).scales
        assert np.allclose(s[:-1] / s[1:], alpha, rtol=1e-12)


# -------------------------------------------------------- classification

class TestClassify:
    def test_channel_at_tmax_goes_first(self):
        assert classify_channel(22.4, build_ladder(22.4, 2, 3, 8)) == 1

    def test_derived_mid_group(self):
        # 5.6 < 9.0 <= 11.2 places the channel in group 2
        assert classify_channel(9.0, build_ladder(22.4, 2, 3, 8)) == 2

    def test_zero_clamps_to_last(self):
        assert classify_channel(0.0, build_ladder(22.4, 2, 3, 8)) == 3

    def test_below_lowest_boundary_clamps(self):
        assert classify_channel(0.01, build_ladder(22.4, 2, 3, 8)) == 3

    def test_boundary_inclusive_above(self):
        # upper boundary belongs to the group below it
        assert classify_channel(11.2, build_ladder(22.4, 2, 3, 8)) == 2

    def test_cmax_above_tmax_rejected(self):
        with pytest.raises(ValueError):
            classify_channel(23.0, build_ladder(22.4, 2, 3, 8))

    @given(st.floats(min_value=0, max_value=50.0), st.integers(1, 12))
    @settings(max_examples=200, deadline=None)
    def test_totality_and_eq3(self, cmax, groups):
        ladder = build_ladder(50.0, 2, groups, 8)
        g = classify_channel(cmax, ladder)
        assert 1 <= g <= groups
        lower = 50.0 / 2.0**g
        upper = 50.0 / 2.0 ** (g - 1)
        if cmax > 50.0 / 2.0**groups:  # non-clamped: the inequality holds
            assert lower < cmax <= upper


# ------------------------------------------------------------ build_plan

class TestBuildPlan:
    def test_six_channel_reference_grouping(self):
        plan = plan_from_cmax(SIX_CHANNEL_CMAX, bits=8, num_groups=3)
        chunk = plan.chunks[0]
        assert chunk.ladder.tmax == 22.4
        assert chunk.ladder.scales.tolist() == [22.4 / 127, 11.2 / 127, 5.6 / 127]
        by_group = {g: set() for g in (1, 2, 3)}
        for ch, g in enumerate(chunk.group_of, start=1):
            by_group[int(g)].add(ch)
        assert by_group == {1: {2}, 2: {4, 6}, 3: {1, 3, 5}}

    def test_six_channel_permutation_stable(self):
        chunk = plan_from_cmax(SIX_CHANNEL_CMAX, bits=8, num_groups=3).chunks[0]
        # group-ascending, original order within a group (0-indexed channels)
        assert chunk.permutation.tolist() == [1, 3, 5, 0, 2, 4]
        assert chunk.group_boundaries.tolist() == [0, 1, 3, 6]

    def test_duplicate_samples_idempotent(self):
        x = FloatMatrix(np.random.default_rng(0).normal(size=(32, 8)))
        one = build_plan([x], bits=8, num_groups=4, chunk_rows=16)
        two = build_plan([x, x], bits=8, num_groups=4, chunk_rows=16)
        assert one == two

    def test_chunking_against_scalar_oracle(self):
        rng = np.random.default_rng(99)
        data = rng.normal(size=(512, 64))
        data[:, rng.choice(64, 3, replace=False)] *= 40.0
        plan = build_plan([FloatMatrix(data)], bits=8, num_groups=4, chunk_rows=256)
        oracle = calibrate_scalar([data.tolist()], 8, 2, 4, 256)
        assert len(plan.chunks) == len(oracle) == 2
        for chunk, ref in zip(plan.chunks, oracle):
            assert chunk.row_range == ref["row_range"]
            assert chunk.bias.tolist() == ref["bias"]
            assert chunk.cmax.tolist() == ref["cmax"]
            assert chunk.ladder.tmax == ref["tmax"]
            assert chunk.ladder.scales.tolist() == ref["scales"]
            assert chunk.group_of.tolist() == ref["group_of"]
            assert chunk.permutation.tolist() == ref["permutation"]
            assert chunk.group_boundaries.tolist() == ref["boundaries"]

    def test_multi_sample_aggregation(self):
        a = FloatMatrix(np.array([[1.0, -2.0], [0.5, 2.0]]))
        b = FloatMatrix(np.array([[3.0, 0.0], [-1.0, 0.5]]))
        plan = build_plan([a, b], bits=8, num_groups=2, chunk_rows=8)
        chunk = plan.chunks[0]
        assert chunk.bias.tolist() == [1.0, 0.0]  # (3+-1)/2, (2+-2)/2
        assert chunk.cmax.tolist() == [2.0, 2.0]

    def test_short_sample_contributes_to_overlapping_chunk(self):
        long = FloatMatrix(np.ones((8, 2)))
        short = FloatMatrix(np.full((2, 2), 5.0))
        plan = build_plan([long, short], bits=8, num_groups=1, chunk_rows=4)
        assert len(plan.chunks) == 2
        assert plan.chunks[0].cmax.tolist() == [2.0, 2.0]  # bias 3, |1-3| and |5-3|
        assert plan.chunks[1].cmax.tolist() == [0.0, 0.0]  # only the long sample

    def test_chunk_independence(self):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(64, 8))
        base = build_plan([FloatMatrix(data)], bits=8, num_groups=3, chunk_rows=32)
        mutated = data.copy()
        mutated[40:, :] *= 13.0  # second chunk only
        changed = build_plan([FloatMatrix(mutated)], bits=8, num_groups=3, chunk_rows=32)
        assert changed.chunks[0] == base.chunks[0]
        assert changed.chunks[1] != base.chunks[1]

    def test_errors(self):
        with pytest.raises(ValueError):
            build_plan([], bits=8)
        with pytest.raises(ShapeError):
            build_plan(
                [FloatMatrix(np.ones((2, 2))), FloatMatrix(np.ones((2, 3)))], bits=8
            )


# --------------------------------------------------- activation quantization

class TestQuantizeActivation:
    def test_bias_row_maps_to_zero(self):
        rng = np.random.default_rng(1)
        sample = FloatMatrix(rng.normal(size=(16, 6)) + 3.0)
        plan = build_plan([sample], bits=8, num_groups=3, chunk_rows=32)
        bias_row = FloatMatrix(np.tile(plan.chunks[0].bias, (4, 1)))
        qa = quantize_activation(bias_row, plan)
        assert np.all(qa.data.data == 0)

    def test_out_of_calibration_spike_saturates(self):
        plan = plan_from_cmax([1.0, 2.0], bits=8, num_groups=2)
        spike = FloatMatrix(np.array([[20.0, -20.0]]))  # 10x tmax
        qa = quantize_activation(spike, plan)
        assert qa.data.data.tolist() == [[127, -127]]

    def test_bit_usage_on_calibration_data(self):
        # alpha=2: every channel in groups 1..G-1 reaches at least 2^(b-2)
        rng = np.random.default_rng(12)
        data = rng.normal(size=(64, 32))
        data[:, :3] *= 30.0
        x = FloatMatrix(data)
        for bits in (4, 8):
            plan = build_plan([x], bits=bits, num_groups=4, chunk_rows=64)
            qa = quantize_activation(x, plan)
            chunk = plan.chunks[0]
            peaks = np.abs(qa.data.data).max(axis=0)
            for ch in range(32):
                if chunk.group_of[ch] < plan.num_groups:
                    assert peaks[ch] >= 2 ** (bits - 2)

    def test_shape_mismatch(self):
        plan = plan_from_cmax([1.0, 2.0])
        with pytest.raises(ShapeError):
            quantize_activation(FloatMatrix(np.ones((2, 3))), plan)

    def test_rows_beyond_plan_use_last_chunk(self):
        rng = np.random.default_rng(6)
        sample = FloatMatrix(rng.normal(size=(8, 4)))
        plan = build_plan([sample], bits=8, num_groups=2, chunk_rows=4)
        longer = FloatMatrix(rng.normal(size=(12, 4)))
        qa = quantize_activation(longer, plan)
        assert qa.data.rows == 12


# ------------------------------------------------------ weight quantization

class TestQuantizeWeight:
    def test_identity_matrix(self):
        qw = quantize_weight(FloatMatrix(np.eye(4)), 8)
        assert np.array_equal(qw.data.data, 127 * np.eye(4, dtype=np.int64))
        assert qw.col_scales.tolist() == [1.0 / 127] * 4

    def test_zero_column_convention(self):
        w = np.array([[0.0, 1.0], [0.0, -2.0]])
        qw = quantize_weight(FloatMatrix(w), 8)
        assert qw.col_scales[0] == 1.0
        assert np.all(qw.data.data[:, 0] == 0)

    def test_round_trip_bound(self):
        rng = np.random.default_rng(21)
        w = rng.normal(size=(16, 16))
        qw = quantize_weight(FloatMatrix(w), 8)
        back = qw.data.data * qw.col_scales[None, :]
        assert np.all(np.abs(back - w) <= qw.col_scales[None, :] / 2 * (1 + 1e-9))


# -------------------------------------------------------- bias correction

class TestBiasCorrection:
    def test_zero_bias_zero_correction(self):
        plan = plan_from_cmax([1.0, 2.0])  # symmetric sample, bias 0
        w = FloatMatrix(np.random.default_rng(0).normal(size=(2, 3)))
        rows = bias_correction(plan, w)
        assert np.all(rows[0].data == 0.0)

    def test_unit_bias_picks_weight_row(self):
        sample = FloatMatrix(np.array([[2.0, 0.0], [2.0, 0.0]]))  # bias e_0*2
        plan = build_plan([sample], bits=8, num_groups=1, chunk_rows=4)
        w = FloatMatrix(np.array([[1.5, -2.5, 3.0], [0.0, 1.0, 0.0]]))
        rows = bias_correction(plan, w)
        assert rows[0].data[0].tolist() == [3.0, -5.0, 6.0]

    def test_reproduces_uncentered_gemm(self):
        rng = np.random.default_rng(31)
        x = FloatMatrix(rng.normal(size=(32, 12)) + rng.normal(size=12)[None, :] * 5)
        w = FloatMatrix(rng.normal(size=(12, 7)))
        plan = build_plan([x], bits=8, num_groups=2, chunk_rows=16)
        want = matmul_float(x, w).data
        got = np.empty_like(want)
        rows = bias_correction(plan, w)
        for start, stop, ci in plan.apply_ranges(x.rows):
            centered = x.data[start:stop] - plan.chunks[ci].bias[None, :]
            got[start:stop] = centered @ w.data + rows[ci].data
        assert np.allclose(got, want, rtol=1e-9, atol=1e-9)

    def test_shape_mismatch(self):
        plan = plan_from_cmax([1.0, 2.0])
        with pytest.raises(ShapeError):
            bias_correction(plan, FloatMatrix(np.ones((3, 3))))


# ---------------------------------------------------------- serialization

class TestPlanIO:
    def _plan(self):
        rng = np.random.default_rng(13)
        data = rng.normal(size=(96, 10))
        data[:, 2] *= 25.0
        return build_plan([FloatMatrix(data)], bits=4, num_groups=3, chunk_rows=64)

    def test_round_trip_equality(self):
        plan = self._plan()
        assert loads_plan(dumps_plan(plan)) == plan

    def test_reserialization_byte_identical(self):
        text = dumps_plan(self._plan())
        assert dumps_plan(loads_plan(text)) == text

    def test_file_io(self, tmp_path):
        plan = self._plan()
        path = tmp_path / "plan.json"
        dump_plan(plan, path)
        assert load_plan(path) == plan

    def test_malformed_documents(self):
        from msquant import DataFormatError

        with pytest.raises(DataFormatError):
            loads_plan("not json at all {")
        with pytest.raises(DataFormatError):
            loads_plan("{}")
        good = dumps_plan(self._plan())
        import json

        doc = json.loads(good)
        doc["chunks"][0]["permutation"][0] = 9  # breaks the bijection
        with pytest.raises(DataFormatError):
            loads_plan(json.dumps(doc))
        doc = json.loads(good)
        doc["version"] = 2
        with pytest.raises(DataFormatError):
            loads_plan(json.dumps(doc))

"""Group quantizer tests.

The oracles here recompute scales from the stated formulas (absmean for
ternary, absmax/qmax for the int modes) in full precision, independent
of the implementation, and check codes and round-trip errors against
them.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from razorquant.allocation import AllocationScheme, build_plan
from razorquant.errors import ValidationError
from razorquant.quantize import (
    BitMode,
    GroupQuantConfig,
    dequantize_group,
    dequantize_matrix,
    fake_quantize,
    fake_quantize_activations,
    mode_from_label,
    quantize_activations,
    quantize_group,
    quantize_matrix,
    quantize_rows,
    quantize_uniform,
    round_half_away,
)
from razorquant.rng import SeededRng


def oracle_scale(group: np.ndarray, mode: BitMode, cfg: GroupQuantConfig) -> float:
    """Scale from the defining formula, in float64, before f16 storage."""
    g = group.astype(np.float64)
    if mode == BitMode.TERNARY:
        s = cfg.beta * np.abs(g).sum() / g.size
    else:
        s = np.abs(g).max() / mode.qmax
    return max(float(s), cfg.epsilon)


finite_groups = hnp.arrays(
    np.float32,
    st.integers(min_value=1, max_value=16),
    elements=st.floats(min_value=-1e4, max_value=1e4, width=32),
)


class TestRounding:
    @pytest.mark.parametrize(
        "x,expected",
        [(0.5, 1.0), (-0.5, -1.0), (1.5, 2.0), (-1.5, -2.0), (2.4, 2.0), (-2.6, -3.0), (0.0, 0.0)],
    )
    def test_half_rounds_away_from_zero(self, x, expected):
        assert round_half_away(np.array([x])).tolist() == [expected]


class TestHandGroups:
    def test_ternary_group(self):
        codes, scale = quantize_group(
            np.array([1.2, -2.0, 0.1, 0.7], np.float32), BitMode.TERNARY, GroupQuantConfig(4)
        )
        assert scale == 2.0
        assert codes.tolist() == [1, -1, 0, 0]

    def test_int4_group(self):
        codes, scale = quantize_group(
            np.array([7.0, -3.5, 0.0, 1.75], np.float32), BitMode.INT4, GroupQuantConfig(4)
        )
        assert scale == 1.0
        assert codes.tolist() == [7, -4, 0, 2]

    def test_int8_group(self):
        codes, scale = quantize_group(
            np.array([0.5, -1.0, 0.25, 1.0], np.float32), BitMode.INT8, GroupQuantConfig(4)
        )
        # 1/127 is stored at f16 precision.
        assert scale == np.float32(np.float16(1.0 / 127.0))
        assert codes.tolist() == [64, -127, 32, 127]

    def test_all_zero_group_gets_floor_scale(self):
        cfg = GroupQuantConfig(4)
        for mode in BitMode:
            codes, scale = quantize_group(np.zeros(4, np.float32), mode, cfg)
            assert codes.tolist() == [0, 0, 0, 0]
            assert scale == np.float32(np.float16(cfg.epsilon))

    def test_dequantize_group_round_trip(self):
        cfg = GroupQuantConfig(4)
        codes, scale = quantize_group(
            np.array([1.2, -2.0, 0.1, 0.7], np.float32), BitMode.TERNARY, cfg
        )
        np.testing.assert_allclose(
            dequantize_group(codes, scale), [2.0, -2.0, 0.0, 0.0], rtol=0, atol=0
        )


class TestProperties:
    @given(group=finite_groups, mode=st.sampled_from([BitMode.INT4, BitMode.INT8]))
    @settings(max_examples=200, deadline=None)
    def test_int_round_trip_error_within_half_scale(self, group, mode):
        cfg = GroupQuantConfig(16)
        codes, _ = quantize_group(group, mode, cfg)
        s = oracle_scale(group, mode, cfg)
        err = np.abs(group.astype(np.float64) - s * codes)
        # s/2 plus an ulp allowance for the float32 divide inside.
        assert err.max() <= s * (0.5 + 1e-5), f"error {err.max()} vs scale {s}"

    @given(group=finite_groups)
    @settings(max_examples=200, deadline=None)
    def test_ternary_codes_preserve_sign(self, group):
        codes, _ = quantize_group(group, BitMode.TERNARY, GroupQuantConfig(16))
        assert np.all(codes[group > 0] >= 0)
        assert np.all(codes[group < 0] <= 0)
        assert np.all(codes[group == 0] == 0)

    @given(group=finite_groups, mode=st.sampled_from(list(BitMode)))
    @settings(max_examples=200, deadline=None)
    def test_codes_within_mode_range(self, group, mode):
        codes, _ = quantize_group(group, mode, GroupQuantConfig(16))
        assert np.all(np.abs(codes.astype(np.int64)) <= mode.qmax)

    @given(group=finite_groups, mode=st.sampled_from([BitMode.INT4, BitMode.INT8]))
    @settings(max_examples=100, deadline=None)
    def test_int_fake_quantize_is_idempotent(self, group, mode):
        # Holds for the absmax-scaled modes only: the absmax element
        # always lands on +-qmax, so a second pass recovers the same
        # scale exactly.  Ternary scales by the group's mean magnitude,
        # which regrows sparse groups (a lone 1.0 becomes 2.0, then 4.0).
        cfg = GroupQuantConfig(16)
        w = group[None]
        modes = np.full(1, int(mode), np.uint8)
        once = dequantize_matrix(quantize_rows(w, modes, cfg))
        twice = dequantize_matrix(quantize_rows(once, modes, cfg))
        np.testing.assert_array_equal(once, twice)


class TestRowsAndPlans:
    def test_rows_quantized_independently(self, rng):
        cfg = GroupQuantConfig(8)
        w = rng.normal((6, 24)).astype(np.float32)
        modes = np.array([0, 1, 2, 0, 1, 2], np.uint8)
        q = quantize_rows(w, modes, cfg)
        for i in [1, 4]:
            alone = quantize_rows(w[i : i + 1], modes[i : i + 1], cfg)
            np.testing.assert_array_equal(q.codes[i], alone.codes[0])
            np.testing.assert_array_equal(q.scales[i], alone.scales[0])

    def test_tail_group_uses_actual_length(self):
        # 6 columns, group 4: the tail group has 2 entries.  Ternary
        # absmean over the tail must divide by 2, not 4.
        cfg = GroupQuantConfig(4)
        w = np.array([[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]], np.float32)
        q = quantize_rows(w, np.zeros(1, np.uint8), cfg)
        assert q.scales[0, 1] == 2.0  # beta * (2/2), not beta * (2/4)
        assert q.codes[0, 4:].tolist() == [1, 1]  # 1.0/2.0 rounds half away

    def test_plan_maps_rows_to_modes(self):
        w = np.ones((8, 4), np.float32)
        plan = build_plan(8, 0.25, AllocationScheme.SUPER_GROUP)
        q = quantize_matrix(w, plan, GroupQuantConfig(4))
        assert q.row_modes.tolist() == [1, 0, 0, 0, 1, 0, 0, 0]

    def test_plan_shape_mismatch_rejected(self):
        w = np.ones((8, 4), np.float32)
        plan = build_plan(6, 0.5, AllocationScheme.SUPER_GROUP)
        with pytest.raises(ValidationError):
            quantize_matrix(w, plan, GroupQuantConfig(4))

    def test_uniform_helper_matches_rows(self, rng):
        w = rng.normal((3, 8)).astype(np.float32)
        cfg = GroupQuantConfig(4)
        a = quantize_uniform(w, BitMode.INT8, cfg)
        b = quantize_rows(w, np.full(3, 2, np.uint8), cfg)
        np.testing.assert_array_equal(a.codes, b.codes)

    def test_mode_labels(self):
        assert mode_from_label("ternary") == BitMode.TERNARY
        assert mode_from_label("int4") == BitMode.INT4
        assert mode_from_label("int8") == BitMode.INT8
        with pytest.raises(ValidationError):
            mode_from_label("int3")


class TestActivations:
    def test_token_major_grouping(self, rng):
        # x is (d_in, tokens); the quantized form must group along d_in,
        # which means tokens become rows.
        x = rng.normal((12, 5)).astype(np.float32)
        xq = quantize_activations(x, GroupQuantConfig(4))
        assert xq.codes.shape == (5, 12)
        assert np.all(xq.row_modes == int(BitMode.INT8))

    def test_fake_round_trip_shape_and_error(self, rng):
        x = rng.normal((16, 3)).astype(np.float32)
        cfg = GroupQuantConfig(8)
        x_hat = fake_quantize_activations(x, cfg)
        assert x_hat.shape == x.shape
        # int8 on a group of 8: coarse but well under absmax/64.
        assert np.max(np.abs(x - x_hat)) < np.abs(x).max() / 64


class TestFakeQuantize:
    def test_matches_quantize_then_dequantize(self, rng):
        w = rng.normal((5, 20)).astype(np.float32)
        plan = build_plan(5, 0.4, AllocationScheme.STACKED)
        cfg = GroupQuantConfig(8)
        np.testing.assert_array_equal(
            fake_quantize(w, plan, cfg), dequantize_matrix(quantize_matrix(w, plan, cfg))
        )

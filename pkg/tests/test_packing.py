"""Packed container tests: payload byte layout, bit-exact round trips,
and the compression accounting built on top of the formats."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from razorquant.allocation import AllocationScheme, build_plan
from razorquant.errors import FormatError
from razorquant.fixtures import mobilellm_manifest, qwen3_manifest
from razorquant.packing import (
    CompressionPolicy,
    PackFormat,
    compression_report,
    load_blob,
    pack,
    packed_row_bytes,
    save_blob,
    unpack,
)
from razorquant.quantize import BitMode, GroupQuantConfig, quantize_matrix, quantize_rows
from razorquant.rng import SeededRng


def q_random(rows: int, cols: int, modes, group: int = 8, seed: int = 0):
    rng = SeededRng(seed)
    w = rng.normal((rows, cols)).astype(np.float32)
    return quantize_rows(w, np.asarray(modes, np.uint8), GroupQuantConfig(group))


class TestPayloadBytes:
    def test_five_trits_per_byte(self):
        from razorquant.packing import _pack_ternary_row

        assert _pack_ternary_row(np.array([1, -1, 0, 0, 1], np.int8))[0] == 200
        assert _pack_ternary_row(np.zeros(5, np.int8))[0] == 121

    def test_trit_bytes_stay_below_243(self):
        from razorquant.packing import _pack_ternary_row

        payload = _pack_ternary_row(np.ones(35, np.int8))
        assert max(payload) <= 242

    def test_two_nibbles_per_byte(self):
        from razorquant.packing import _pack_int4_row

        assert _pack_int4_row(np.array([7, -4], np.int8))[0] == 79

    @pytest.mark.parametrize(
        "cols,expected",
        [(1, (1, 1, 1)), (5, (1, 3, 5)), (6, (2, 3, 6)), (10, (2, 5, 10)), (11, (3, 6, 11))],
    )
    def test_row_byte_counts(self, cols, expected):
        t, n, b = expected
        assert packed_row_bytes(BitMode.TERNARY, cols) == t
        assert packed_row_bytes(BitMode.INT4, cols) == n
        assert packed_row_bytes(BitMode.INT8, cols) == b


class TestRoundTrips:
    @given(
        rows=st.integers(min_value=1, max_value=6),
        cols=st.integers(min_value=1, max_value=23),
        group=st.integers(min_value=1, max_value=9),
        seed=st.integers(min_value=0, max_value=2**16),
        data=st.data(),
    )
    @settings(max_examples=120, deadline=None)
    def test_pack_unpack_is_identity(self, rows, cols, group, seed, data):
        modes = data.draw(
            st.lists(st.sampled_from([0, 1, 2]), min_size=rows, max_size=rows)
        )
        q = q_random(rows, cols, modes, group=group, seed=seed)
        back = unpack(pack(q))
        np.testing.assert_array_equal(back.codes, q.codes)
        np.testing.assert_array_equal(back.scales, q.scales)
        np.testing.assert_array_equal(back.row_modes, q.row_modes)
        assert back.config == q.config

    @pytest.mark.parametrize("mode", list(BitMode))
    @pytest.mark.parametrize("cols", [1, 4, 5, 7, 15, 16, 17])
    def test_tail_shapes_round_trip(self, mode, cols):
        q = q_random(3, cols, [int(mode)] * 3, group=4, seed=cols)
        back = unpack(pack(q))
        np.testing.assert_array_equal(back.codes, q.codes)

    def test_format_tags(self):
        assert pack(q_random(2, 8, [0, 0])).format == PackFormat.TERNARY_PACK
        assert pack(q_random(2, 8, [1, 1])).format == PackFormat.NIBBLE_PACK
        assert pack(q_random(2, 8, [2, 2])).format == PackFormat.BYTE_PACK
        assert pack(q_random(2, 8, [0, 1])).format == PackFormat.MIXED_PACK


class TestContainer:
    def test_save_load_round_trip(self, tmp_path):
        q = q_random(4, 21, [0, 1, 2, 0], group=6, seed=9)
        blob = pack(q)
        p = tmp_path / "w.rzq"
        save_blob(p, blob)
        back = load_blob(p)
        assert back.rows == blob.rows and back.cols == blob.cols
        assert back.format == blob.format
        assert back.beta == blob.beta and back.epsilon == blob.epsilon
        assert back.payload == blob.payload
        np.testing.assert_array_equal(back.row_modes, blob.row_modes)
        np.testing.assert_array_equal(back.scales, blob.scales)
        q2 = unpack(back)
        np.testing.assert_array_equal(q2.codes, q.codes)

    def test_exact_config_survives(self, tmp_path):
        q = quantize_rows(
            np.ones((1, 4), np.float32),
            np.zeros(1, np.uint8),
            GroupQuantConfig(4, beta=1.7, epsilon=3e-7),
        )
        p = tmp_path / "w.rzq"
        save_blob(p, pack(q))
        cfg = unpack(load_blob(p)).config
        assert cfg.beta == 1.7 and cfg.epsilon == 3e-7

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "w.rzq"
        save_blob(p, pack(q_random(1, 5, [0])))
        data = bytearray(p.read_bytes())
        data[:4] = b"XXXX"
        p.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_blob(p)

    def test_corrupt_mode_table_rejected(self, tmp_path):
        p = tmp_path / "w.rzq"
        save_blob(p, pack(q_random(2, 5, [0, 1])))
        data = bytearray(p.read_bytes())
        data[64] = 9  # first row-mode byte
        p.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_blob(p)

    def test_truncated_file_rejected(self, tmp_path):
        p = tmp_path / "w.rzq"
        save_blob(p, pack(q_random(2, 9, [1, 1])))
        p.write_bytes(p.read_bytes()[:-1])
        with pytest.raises(FormatError):
            load_blob(p)

    def test_stray_pad_trit_rejected(self, tmp_path):
        # A ternary byte of 243+ cannot arise from valid trits.
        p = tmp_path / "w.rzq"
        blob = pack(q_random(1, 5, [0]))
        save_blob(p, blob)
        data = bytearray(p.read_bytes())
        data[-len(blob.scales.tobytes()) - 1] = 250
        p.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            unpack(load_blob(p))


class TestCompressionReport:
    def test_qwen3_ratio_ladder(self):
        m = qwen3_manifest()
        expected = {4.0: 3.94, 2.79: 5.05, 1.88: 6.41, 1.58: 7.04}
        for bits, target in expected.items():
            rep = compression_report(m, CompressionPolicy(decoder_bits=bits))
            assert abs(rep.compression_ratio_nominal - target) <= 0.01, (
                f"decoder bits {bits}: got {rep.compression_ratio_nominal}"
            )

    def test_qwen3_quantization_proportion(self):
        rep = compression_report(qwen3_manifest(), CompressionPolicy(decoder_bits=1.58))
        assert 99.9 <= rep.quantization_proportion < 100.0

    def test_mobilellm_four_bit_ratio(self):
        rep = compression_report(
            mobilellm_manifest(),
            CompressionPolicy(decoder_bits=4.0, embedding_bits=4.0, group_size=64),
        )
        assert abs(rep.compression_ratio_nominal - 3.76) <= 0.01

    def test_single_layer_accounting(self):
        # One 256x256 decoder layer at 4-bit, group 64: 4 + 16/64 bits.
        from razorquant.manifest import LayerRole, LayerSpec, ModelManifest

        m = ModelManifest(
            name="one",
            tied_embedding=False,
            layers=(LayerSpec("w", 256, 256, LayerRole.DECODER, True),),
        )
        rep = compression_report(m, CompressionPolicy(decoder_bits=4.0, group_size=64))
        assert abs(rep.nominal_bits_per_weight - 4.25) < 5e-4
        assert abs(rep.compression_ratio_nominal - 16 / 4.25) < 5e-4

    def test_physical_exceeds_nominal_for_mixed_rows(self):
        # Ternary rows cost 1.6 bits packed vs 1.58 nominal, so physical
        # accounting is never cheaper.
        m = qwen3_manifest()
        for bits in (1.58, 1.88, 2.79, 4.0):
            rep = compression_report(m, CompressionPolicy(decoder_bits=bits))
            assert rep.physical_bits_per_weight >= rep.nominal_bits_per_weight - 1e-9

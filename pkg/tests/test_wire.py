"""Binary snapshot and message formats: bit-exact round trips and sizes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitllm import wire
from splitllm.errors import FormatError
from splitllm.rng import Rng


def _random_matrix(seed, rows, cols, dtype):
    return Rng(seed).normals(rows * cols).reshape(rows, cols).astype(dtype)


class TestMatrixSnapshot:
    @pytest.mark.parametrize("dtype,tag", [(np.float32, 0), (np.float64, 1)])
    def test_round_trip_bit_exact(self, dtype, tag):
        arr = _random_matrix(3, 5, 7, dtype)
        buf = wire.encode_matrix(arr)
        assert buf[:4] == b"SLMX"
        assert buf[12:16] == tag.to_bytes(4, "little")
        out, offset = wire.decode_matrix(buf)
        assert offset == len(buf)
        assert out.dtype == dtype
        assert out.tobytes() == arr.tobytes()

    def test_header_is_16_bytes(self):
        arr = np.zeros((2, 3), dtype=np.float32)
        assert len(wire.encode_matrix(arr)) == 16 + 2 * 3 * 4
        assert wire.matrix_size(2, 3) == 16 + 24

    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_property(self, rows, cols, seed):
        arr = _random_matrix(seed, rows, cols, np.float32)
        out, _ = wire.decode_matrix(wire.encode_matrix(arr))
        assert out.tobytes() == arr.tobytes()

    def test_bad_magic_rejected(self):
        with pytest.raises(FormatError):
            wire.decode_matrix(b"NOPE" + b"\x00" * 20)

    def test_truncated_payload_rejected(self):
        buf = wire.encode_matrix(np.ones((4, 4), dtype=np.float32))
        with pytest.raises(FormatError):
            wire.decode_matrix(buf[:-3])

    def test_unsupported_dtype_rejected(self):
        with pytest.raises(FormatError):
            wire.encode_matrix(np.zeros((2, 2), dtype=np.int32))

    def test_file_round_trip(self, tmp_path):
        arr = _random_matrix(9, 6, 2, np.float32)
        path = tmp_path / "w.slmx"
        wire.write_matrix(path, arr)
        assert wire.read_matrix(path).tobytes() == arr.tobytes()


class TestAdapterSnapshot:
    def test_round_trip_bit_exact(self, tmp_path):
        a = _random_matrix(1, 8, 3, np.float32)
        b = _random_matrix(2, 3, 6, np.float32)
        path = tmp_path / "l4.slad"
        wire.write_adapter(path, 4, a, b)
        layer, a2, b2 = wire.read_adapter(path)
        assert layer == 4
        assert a2.tobytes() == a.tobytes()
        assert b2.tobytes() == b.tobytes()

    def test_size_formula(self):
        a = np.zeros((8, 3), dtype=np.float32)
        b = np.zeros((3, 6), dtype=np.float32)
        assert len(wire.encode_adapter(2, a, b)) == wire.adapter_size(8, 3, 6)

    def test_rank_mismatch_rejected(self):
        with pytest.raises(FormatError):
            wire.encode_adapter(1, np.zeros((4, 2), dtype=np.float32),
                                np.zeros((3, 5), dtype=np.float32))

    def test_bad_magic_rejected(self):
        with pytest.raises(FormatError):
            wire.decode_adapter(b"XXXX" + b"\x00" * 40)


class TestMessages:
    def test_header_layout(self):
        buf = wire.encode_message("act_user_edge", 3, 1, 2, 5, b"payload")
        assert len(buf) == wire.MESSAGE_HEADER_SIZE + len(b"payload")
        assert wire.MESSAGE_HEADER_SIZE == 17
        tag, t, k, m, n, payload = wire.decode_message(buf)
        assert (tag, t, k, m, n, payload) == ("act_user_edge", 3, 1, 2, 5, b"payload")

    def test_all_tags_round_trip(self):
        for tag in wire.TAG_NAMES.values():
            out = wire.decode_message(wire.encode_message(tag, 1, 2, 3, 4, b""))
            assert out[0] == tag

    def test_unknown_tag_rejected(self):
        buf = bytearray(wire.encode_message("act_user_edge", 1, 1, 1, 1, b""))
        buf[0] = 200
        with pytest.raises(FormatError):
            wire.decode_message(bytes(buf))

    def test_labels_round_trip(self):
        labels = np.array([0, 2, 1, 2], dtype=np.int64)
        buf = wire.encode_labels(labels)
        assert len(buf) == 4 + 4 * labels.size
        out, offset = wire.decode_labels(buf, 0)
        assert offset == len(buf)
        assert np.array_equal(out, labels)

    def test_activation_payload_round_trip(self):
        tensor = _random_matrix(4, 5, 6, np.float32)
        labels = np.array([1, 0, 2, 1, 0])
        payload = wire.encode_matrix(tensor) + wire.encode_labels(labels)
        buf = wire.encode_message("act_edge_cloud", 2, 1, 1, 3, payload)
        tag, t, k, m, n, body = wire.decode_message(buf)
        mat, offset = wire.decode_matrix(body)
        got_labels, _ = wire.decode_labels(body, offset)
        assert mat.tobytes() == tensor.tobytes()
        assert np.array_equal(got_labels, labels)

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pixood.tensor import (
    BadMagicError,
    NonFiniteTensorError,
    TensorFormatError,
    TruncatedTensorError,
    decode_tensor,
    encode_tensor,
    load_tensor,
    resize_bilinear,
    resize_nearest,
    save_tensor,
)


def test_load_known_file(tmp_path):
    raw = b"TNSR" + struct.pack("<BB", 0, 2) + struct.pack("<2Q", 2, 2) + struct.pack("<4f", 0, 1, 2, 3)
    (tmp_path / "t.tnsr").write_bytes(raw)
    t = load_tensor(tmp_path / "t.tnsr")
    assert t.dtype == np.float32
    np.testing.assert_array_equal(t, [[0, 1], [2, 3]])


def test_payload_encoding_of_7_5():
    buf = encode_tensor(np.array([7.5], dtype=np.float32))
    assert buf[:4] == b"TNSR"
    assert buf[4:6] == bytes([0, 1])
    assert buf[6:14] == struct.pack("<Q", 1)
    assert buf[14:] == bytes.fromhex("0000f040")


def test_bad_magic(tmp_path):
    good = encode_tensor(np.zeros(3, dtype=np.uint8))
    (tmp_path / "bad.tnsr").write_bytes(b"XXXX" + good[4:])
    with pytest.raises(BadMagicError):
        load_tensor(tmp_path / "bad.tnsr")


def test_truncated_payload():
    good = encode_tensor(np.arange(6, dtype=np.uint16).reshape(2, 3))
    with pytest.raises(TruncatedTensorError):
        decode_tensor(good[:-1])
    with pytest.raises(TruncatedTensorError):
        decode_tensor(good[:9])


def test_non_finite_refused_both_ways(tmp_path):
    bad = np.array([1.0, np.nan], dtype=np.float32)
    with pytest.raises(NonFiniteTensorError):
        save_tensor(bad, tmp_path / "x.tnsr")
    assert not (tmp_path / "x.tnsr").exists()
    raw = b"TNSR" + struct.pack("<BBQ", 0, 1, 2) + np.array([1.0, np.inf], dtype="<f4").tobytes()
    with pytest.raises(NonFiniteTensorError):
        decode_tensor(raw)


def test_zero_length_dimension_rejected(tmp_path):
    with pytest.raises(TensorFormatError):
        save_tensor(np.zeros((0, 3), dtype=np.float32), tmp_path / "z.tnsr")


def test_unsupported_dtype_rejected():
    with pytest.raises(TensorFormatError):
        encode_tensor(np.zeros(2, dtype=np.float64))


_dtypes = st.sampled_from([np.float32, np.uint8, np.uint16, np.uint64])


@st.composite
def tensors(draw):
    dt = draw(_dtypes)
    shape = draw(hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5))
    elements = st.floats(-1e6, 1e6, width=32) if dt == np.float32 else None
    return draw(hnp.arrays(dt, shape, elements=elements))


@given(tensors())
@settings(max_examples=100, deadline=None)
def test_round_trip_bit_identical(t):
    back = decode_tensor(encode_tensor(t))
    assert back.dtype == t.dtype and back.shape == t.shape
    assert back.tobytes() == t.tobytes()


def test_round_trip_through_file(tmp_path):
    t = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
    save_tensor(t, tmp_path / "a" / "t.tnsr")
    assert load_tensor(tmp_path / "a" / "t.tnsr").tobytes() == t.tobytes()


# -- resizing -------------------------------------------------------------------


def test_nearest_identity():
    lab = np.array([[1, 2], [3, 4]], dtype=np.uint16)
    np.testing.assert_array_equal(resize_nearest(lab, 2, 2), lab)


def test_nearest_upsample_half_pixel():
    lab = np.array([[5, 9]], dtype=np.uint16)
    np.testing.assert_array_equal(resize_nearest(lab, 1, 4), [[5, 5, 9, 9]])


def test_nearest_downsample_picks_centres():
    lab = np.arange(16, dtype=np.uint16).reshape(4, 4)
    # output centres at source coordinates 1.0 and 3.0 (floor of 1.0, 3.0)
    np.testing.assert_array_equal(resize_nearest(lab, 2, 2), [[5, 7], [13, 15]])


@pytest.mark.parametrize("size", [(1, 1), (3, 7), (10, 2)])
def test_constant_maps_stay_constant(size):
    lab = np.full((4, 5), 7, dtype=np.uint16)
    assert (resize_nearest(lab, *size) == 7).all()
    s = np.full((4, 5), 0.3, dtype=np.float32)
    assert (resize_bilinear(s, *size) == np.float32(0.3)).all()


def test_bilinear_identity():
    s = np.random.default_rng(1).random((3, 4)).astype(np.float32)
    np.testing.assert_array_equal(resize_bilinear(s, 3, 4), s)


def test_bilinear_1x2_to_1x4():
    out = resize_bilinear(np.array([[0.0, 1.0]], dtype=np.float32), 1, 4)
    # source coords -0.25, 0.25, 0.75, 1.25 clamp to [0, 1]
    np.testing.assert_allclose(out, [[0.0, 0.25, 0.75, 1.0]], atol=1e-7)
    assert np.all(np.diff(out[0]) >= 0)


@given(
    hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=6), elements=st.floats(0, 1, width=32)),
    st.integers(1, 9),
    st.integers(1, 9),
)
@settings(max_examples=100, deadline=None)
def test_bilinear_range_never_exceeds_input(s, oh, ow):
    out = resize_bilinear(s, oh, ow)
    assert out.shape == (oh, ow)
    assert out.min() >= s.min() and out.max() <= s.max()


def test_resize_rejects_empty_output():
    with pytest.raises(ValueError):
        resize_nearest(np.zeros((2, 2), dtype=np.uint16), 0, 3)
    with pytest.raises(ValueError):
        resize_bilinear(np.zeros((2, 2), dtype=np.float32), 2, 0)

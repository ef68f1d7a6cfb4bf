import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from causticsim.encoding import decode_pfm, decode_png, encode_pfm, encode_png8, encode_png16
from causticsim.errors import DimensionError, ParseError

shapes = st.tuples(st.integers(1, 24), st.integers(1, 24))


def test_png16_single_max_value():
    assert decode_png(encode_png16(np.array([[65535]], np.uint16)))[0, 0] == 65535


def test_png16_random_64():
    x = np.random.default_rng(0).integers(0, 65536, (64, 64)).astype(np.uint16)
    y = decode_png(encode_png16(x))
    assert y.dtype == np.uint16
    np.testing.assert_array_equal(x, y)


@given(hnp.arrays(np.uint16, shapes))
def test_png16_round_trip(x):
    np.testing.assert_array_equal(decode_png(encode_png16(x)), x)


@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 16), st.integers(1, 16), st.just(3))))
def test_png8_rgb_round_trip(x):
    np.testing.assert_array_equal(decode_png(encode_png8(x)), x)


@given(hnp.arrays(np.uint8, shapes))
def test_png8_gray_round_trip(x):
    np.testing.assert_array_equal(decode_png(encode_png8(x)), x)


finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@given(hnp.arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3)), elements=finite32))
def test_pfm_rgb_bit_exact(x):
    np.testing.assert_array_equal(decode_pfm(encode_pfm(x)).view(np.uint32), x.view(np.uint32))


@given(hnp.arrays(np.float32, shapes, elements=finite32))
def test_pfm_gray_bit_exact(x):
    np.testing.assert_array_equal(decode_pfm(encode_pfm(x)).view(np.uint32), x.view(np.uint32))


def test_pfm_rows_stored_bottom_up():
    x = np.array([[1.0], [2.0]], np.float32)
    body = encode_pfm(x).split(b"\n", 3)[3]
    assert np.frombuffer(body, "<f4").tolist() == [2.0, 1.0]


def test_pfm_big_endian_input():
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    data = b"Pf\n3 2\n1.0\n" + x[::-1].astype(">f4").tobytes()
    np.testing.assert_array_equal(decode_pfm(data), x)


def test_nan_to_png16_rejected():
    with pytest.raises(ValueError):
        encode_png16(np.array([[np.nan, 1.0]]))


@pytest.mark.parametrize("bad", [np.array([[70000]]), np.array([[-1]]), np.array([[0.5]])])
def test_png16_out_of_range(bad):
    with pytest.raises(ValueError):
        encode_png16(bad)


def test_dimension_errors():
    with pytest.raises(DimensionError):
        encode_png16(np.zeros((0, 4), np.uint16))
    with pytest.raises(DimensionError):
        encode_png16(np.zeros((1, 70000), np.uint16))
    with pytest.raises(DimensionError):
        encode_png8(np.zeros((2, 2, 4), np.uint8))
    with pytest.raises(DimensionError):
        encode_pfm(np.zeros((2, 2, 2), np.float32))


@pytest.mark.parametrize("data", [b"", b"PX\n1 1\n-1\n\0\0\0\0", b"Pf\n2 2\n-1\n\0\0", b"garbage"])
def test_pfm_parse_errors(data):
    with pytest.raises(ParseError):
        decode_pfm(data)


def test_png_parse_error():
    with pytest.raises(ParseError):
        decode_png(b"\x89PNG not really")


def test_png_bytes_deterministic():
    x = np.random.default_rng(1).integers(0, 256, (16, 16, 3)).astype(np.uint8)
    assert encode_png8(x) == encode_png8(x.copy())

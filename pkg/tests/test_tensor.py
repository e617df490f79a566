import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noforge import tensor as T
from noforge.errors import InvalidShape, ShapeMismatch


def test_constructors_and_dtype():
    z = T.zeros((2, 3))
    assert z.dtype == np.float32 and z.shape == (2, 3) and not z.any()
    assert T.ones((4,), dtype=np.float64).sum() == 4.0
    assert np.all(T.full((2, 2), 7.5) == 7.5)


@pytest.mark.parametrize("shape", [(), (0,), (3, 0), (2, -1)])
def test_bad_shapes_rejected(shape):
    with pytest.raises(InvalidShape):
        T.zeros(shape)


def test_linspace_endpoints_exact():
    for n in (2, 5, 16, 44):
        g = T.linspace_grid(n)
        assert g[0] == 0.0 and g[-1] == 1.0 and len(g) == n
        assert np.all(np.diff(g) > 0)


def test_concat_and_broadcast():
    a = np.zeros((1, 4, 4, 2))
    b = T.broadcast_scalar_to_grid(0.25, (4, 4, 2))
    c = T.concat_channels([a, b])
    assert c.shape == (2, 4, 4, 2) and np.all(c[1] == 0.25)
    with pytest.raises(ShapeMismatch):
        T.concat_channels([a, np.zeros((1, 4, 4, 3))])


def test_elementwise_shape_checks():
    with pytest.raises(ShapeMismatch):
        T.add(np.zeros(3), np.zeros(4))
    np.testing.assert_array_equal(T.mul(np.arange(3.0), np.arange(3.0)), [0, 1, 4])


def test_reduce_with_mask():
    x = np.arange(6.0).reshape(2, 3)
    m = np.array([[1, 0, 1], [0, 0, 1]])
    assert T.reduce(x, "sum", m) == 0 + 2 + 5
    assert T.reduce(x, "max", m) == 5
    assert T.reduce(x, "mean") == 2.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.data())
def test_flat_multi_index_roundtrip(shape, data):
    total = int(np.prod(shape))
    flat = data.draw(st.integers(0, total - 1))
    idx = T.multi_index(shape, flat)
    assert T.flat_index(shape, idx) == flat
    assert flat == np.ravel_multi_index(idx, shape)


def test_index_out_of_range():
    with pytest.raises(IndexError):
        T.flat_index((2, 3), (2, 0))
    with pytest.raises(IndexError):
        T.multi_index((2, 3), 6)


def test_planes_roundtrip():
    z = np.array([1 + 2j, -3.5j])
    re, im = T.to_planes(z)
    np.testing.assert_array_equal(T.from_planes(re, im), z)


def test_raw_io_roundtrip(tmp_path):
    x = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
    T.write_raw(tmp_path / "x.f32", x)
    assert (tmp_path / "x.f32").stat().st_size == x.nbytes
    np.testing.assert_array_equal(T.read_raw(tmp_path / "x.f32", x.shape, np.float32), x)
    with pytest.raises(ShapeMismatch):
        T.read_raw(tmp_path / "x.f32", (3, 4, 4), np.float32)

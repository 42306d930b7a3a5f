import itertools
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lmtcnn.errors import EmptyRange, InvalidRate, ShapeMismatch, ZeroOrNegativeExtent
from lmtcnn.tensor import (
    Rng,
    coordinate,
    dropout_mask,
    flat_index,
    rng_uniform,
    tensor_map2,
    tensor_zeros,
)


def test_zeros_shapes():
    z = tensor_zeros([2, 3])
    assert z.shape == (2, 3) and z.size == 6 and not z.any()
    assert tensor_zeros([1]).tolist() == [0.0]
    big = tensor_zeros([227, 227, 3])
    assert big.size == 154_587 and not big.any()


@pytest.mark.parametrize("shape", [[0], [2, 0], [3, -1]])
def test_zeros_rejects_bad_extent(shape):
    with pytest.raises(ZeroOrNegativeExtent):
        tensor_zeros(shape)


def test_map2():
    assert tensor_map2(np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.add).tolist() == [4.0, 6.0]
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert not tensor_map2(x, np.zeros_like(x), np.multiply).any()
    assert not tensor_map2(x, np.negative(x), np.add).any()
    with pytest.raises(ShapeMismatch):
        tensor_map2(np.zeros(2), np.zeros(3), np.add)


floats = st.floats(-1, 1, allow_nan=False)


@given(st.lists(st.tuples(floats, floats, floats), min_size=1, max_size=20))
def test_map2_add_commutative_associative(rows):
    a, b, c = (np.array(col) for col in zip(*rows))
    np.testing.assert_allclose(tensor_map2(a, b, np.add), tensor_map2(b, a, np.add), atol=1e-12)
    left = tensor_map2(tensor_map2(a, b, np.add), c, np.add)
    right = tensor_map2(a, tensor_map2(b, c, np.add), np.add)
    np.testing.assert_allclose(left, right, atol=1e-12)


@pytest.mark.parametrize("shape", [(1,), (5,), (2, 3), (3, 1, 4), (2, 2, 2, 3)])
def test_index_roundtrip_exhaustive(shape):
    size = int(np.prod(shape))
    for idx, coord in enumerate(itertools.product(*(range(n) for n in shape))):
        assert flat_index(coord, shape) == idx
        assert coordinate(idx, shape) == coord
    assert idx == size - 1


def test_rng_determinism():
    a = rng_uniform(Rng(7), [4, 4], -1, 1)
    rng = Rng(7)
    first = rng_uniform(rng, [4, 4], -1, 1)
    second = rng_uniform(rng, [4, 4], -1, 1)
    assert not np.array_equal(first, second)
    np.testing.assert_array_equal(a, first)


def test_rng_empty_range():
    with pytest.raises(EmptyRange):
        rng_uniform(Rng(0), [3], 0, 0)


def test_rng_uniform_range_and_mean():
    x = rng_uniform(Rng(3), [1000], -1, 1)
    assert x.min() >= -1 and x.max() < 1
    assert abs(x.mean()) < 0.1


def test_rng_golden_values():
    # frozen output of PCG64(seed=7); guards the generator choice
    x = rng_uniform(Rng(7), [4], 0, 1)
    np.testing.assert_array_equal(x, GOLDEN_SEED7)


GOLDEN_SEED7 = np.array([0.625095466604667, 0.8972138009695755,
                         0.7756856902451935, 0.22520718999059186])


def test_rng_identical_across_processes():
    code = ("from lmtcnn.tensor import Rng, rng_uniform;"
            "print(rng_uniform(Rng(123), [6], -2, 3).tobytes().hex())")
    runs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    assert runs[0] == runs[1]
    assert runs[0].strip() == rng_uniform(Rng(123), [6], -2, 3).tobytes().hex()


def test_dropout_mask_rate_validation():
    with pytest.raises(InvalidRate):
        dropout_mask(Rng(0), (3,), 1.0)
    assert (dropout_mask(Rng(0), (5,), 0.0) == 1).all()

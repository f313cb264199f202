import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from moc import matrix_io


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=0, max_side=6),
                  elements=st.floats(allow_nan=False)))
def test_round_trip_float64(m):
    np.testing.assert_array_equal(matrix_io.loads(matrix_io.dumps(m)), m)


def test_round_trip_float32(rng, tmp_path):
    m = rng.standard_normal((3, 5))
    path = tmp_path / "g.mocm"
    matrix_io.save(path, m, width=4)
    np.testing.assert_array_equal(matrix_io.load(path), m.astype(np.float32))


def test_header_layout():
    buf = matrix_io.dumps(np.arange(6.0).reshape(2, 3))
    assert buf[:4] == b"MOCM"
    assert struct.unpack_from("<HHQQ", buf, 4) == (1, 8, 2, 3)
    assert len(buf) == 24 + 6 * 8
    assert struct.unpack_from("<d", buf, 24 + 8 * 4)[0] == 4.0  # row-major


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-1],
    lambda b: b[:10],
    lambda b: b[:6] + struct.pack("<H", 3) + b[8:],
])
def test_rejects_corrupt(mutate):
    buf = matrix_io.dumps(np.ones((2, 2)))
    with pytest.raises(matrix_io.MatrixFormatError):
        matrix_io.loads(mutate(buf))


def test_rejects_non_matrix():
    with pytest.raises(matrix_io.MatrixFormatError):
        matrix_io.dumps(np.ones(3))

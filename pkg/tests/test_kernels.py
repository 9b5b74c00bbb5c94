import os
import subprocess
import sys

import numpy as np
import pytest

from sgnet import _pykernels, kernels

IMPLS = kernels.backends()
compiled = pytest.mark.skipif(len(IMPLS) < 2, reason="compiled extension not built")


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.BACKEND)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_im2col_layout(impl, dtype):
    x = np.arange(2 * 4 * 4 * 2, dtype=dtype).reshape(2, 4, 4, 2)
    cols = kernels.im2col(x, 3, 3, 1, impl=impl)
    assert cols.shape == (2 * 2 * 2, 18)
    # row 0 is the top-left 3x3 window flattened (i, j, c)
    np.testing.assert_array_equal(cols[0], x[0, :3, :3, :].reshape(-1))


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.BACKEND)
def test_col2im_is_adjoint_of_im2col(impl, rng):
    x = rng.standard_normal((2, 6, 5, 3))
    c = rng.standard_normal((2 * 2 * 2, 27))
    lhs = np.sum(kernels.im2col(x, 3, 3, 2, impl=impl) * c)
    rhs = np.sum(kernels.col2im(c, x.shape, 3, 3, 2, impl=impl) * x)
    assert lhs == pytest.approx(rhs)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.BACKEND)
def test_maxpool_first_occurrence_ties(impl):
    x = np.ones((1, 2, 2, 1))
    out, arg = kernels.maxpool_forward(x, 2, 2, impl=impl)
    assert out[0, 0, 0, 0] == 1 and arg[0, 0, 0, 0] == 0


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.BACKEND)
def test_jacobi_non_convergence_signal(impl, rng):
    a = rng.standard_normal((10, 10))
    _, _, sweeps = kernels.jacobi_eigh(a + a.T, 1e-14, 1, impl=impl)
    assert sweeps == 2


@compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_bitwise_equal(rng, dtype):
    py, cy = IMPLS
    x = rng.standard_normal((3, 9, 10, 4)).astype(dtype)
    np.testing.assert_array_equal(kernels.im2col(x, 3, 3, 1, impl=py), kernels.im2col(x, 3, 3, 1, impl=cy))
    cols = kernels.im2col(x, 3, 3, 2, impl=py)
    np.testing.assert_allclose(kernels.col2im(cols, x.shape, 3, 3, 2, impl=py),
                               kernels.col2im(cols, x.shape, 3, 3, 2, impl=cy), rtol=1e-6)
    for a, b in zip(kernels.maxpool_forward(x, 2, 2, impl=py), kernels.maxpool_forward(x, 2, 2, impl=cy)):
        np.testing.assert_array_equal(a, b)
    out, arg = kernels.maxpool_forward(x, 2, 2, impl=py)
    np.testing.assert_array_equal(kernels.maxpool_backward(out, arg, x.shape, impl=py),
                                  kernels.maxpool_backward(out, arg, x.shape, impl=cy))
    maps = np.round(x[..., 0] * 2)  # ties
    for minimize in (False, True):
        for a, b in zip(kernels.patch_extrema(np.pad(maps, ((0, 0), (0, 3), (0, 2))), 4, minimize, 9, 10, impl=py),
                        kernels.patch_extrema(np.pad(maps, ((0, 0), (0, 3), (0, 2))), 4, minimize, 9, 10, impl=cy)):
            np.testing.assert_array_equal(a, b)


@compiled
def test_jacobi_backends_agree(rng):
    py, cy = IMPLS
    a = rng.standard_normal((20, 20))
    a = a + a.T
    w0, v0, s0 = kernels.jacobi_eigh(a, 1e-12, 100, impl=py)
    w1, v1, s1 = kernels.jacobi_eigh(a, 1e-12, 100, impl=cy)
    np.testing.assert_allclose(np.sort(w0), np.sort(w1), atol=1e-10)
    assert s0 == s1


def test_pure_python_switch():
    env = dict(os.environ, SGN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from sgnet import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == _pykernels.BACKEND

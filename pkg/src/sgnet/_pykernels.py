"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one to one and are selected by
:mod:`sgnet.kernels` when the compiled extension is unavailable.
All image tensors are NHWC.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def im2col(xp, kh, kw, stride):
    """Unfold a padded (B, Hp, Wp, C) tensor into (B*OH*OW, kh*kw*C) rows."""
    b, hp, wp, c = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (B, OH, OW, C, kh, kw) -> (B, OH, OW, kh, kw, C)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(b * oh * ow, kh * kw * c)


def col2im(cols, padded_shape, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add rows back into a padded tensor."""
    b, hp, wp, c = padded_shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols6 = cols.reshape(b, oh, ow, kh, kw, c)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        ys = slice(i, i + stride * (oh - 1) + 1, stride)
        for j in range(kw):
            xs = slice(j, j + stride * (ow - 1) + 1, stride)
            out[:, ys, xs, :] += cols6[:, :, :, i, j, :]
    return out


def maxpool_forward(x, window, stride):
    """Per-window max; argmax is the flat ``y*W + x`` index of the winner.

    Ties resolve to the first element in row-major window order.
    """
    b, h, w, c = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    win = win.reshape(b, oh, ow, c, window * window)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    oy = (np.arange(oh) * stride)[None, :, None, None]
    ox = (np.arange(ow) * stride)[None, None, :, None]
    argmax = (oy + local // window) * w + (ox + local % window)
    return np.ascontiguousarray(out), argmax.astype(np.int64)


def maxpool_backward(grad_out, argmax, input_shape):
    b, h, w, c = input_shape
    oh, ow = grad_out.shape[1:3]
    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, None, None, :]
    flat = (bi * (h * w) + argmax) * c + ci
    acc = np.bincount(flat.ravel(), weights=grad_out.ravel(), minlength=b * h * w * c)
    return acc.reshape(input_shape).astype(grad_out.dtype)


def patch_extrema(padded, patch, minimize, valid_h, valid_w):
    """Patch-local (row, col) of the max (or min) of each patch.

    ``padded`` is (B, Hp, Wp) with Hp, Wp multiples of ``patch``. In
    minimize mode cells at or beyond (valid_h, valid_w) are never chosen.
    """
    b, hp, wp = padded.shape
    gr, gc = hp // patch, wp // patch
    vals = padded
    if minimize and (valid_h < hp or valid_w < wp):
        vals = padded.astype(np.float64, copy=True)
        vals[:, valid_h:, :] = np.inf
        vals[:, :, valid_w:] = np.inf
    tiles = vals.reshape(b, gr, patch, gc, patch).transpose(0, 1, 3, 2, 4)
    tiles = tiles.reshape(b, gr, gc, patch * patch)
    flat = tiles.argmin(axis=-1) if minimize else tiles.argmax(axis=-1)
    return (flat // patch).astype(np.int64), (flat % patch).astype(np.int64)


def jacobi_eigh(a, tol, max_sweeps):
    """Cyclic (row-order) Jacobi rotations on a symmetric float64 matrix.

    Returns unsorted eigenvalues, eigenvector columns and the sweep count;
    ``sweeps == max_sweeps + 1`` signals non-convergence.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    for sweep in range(max_sweeps + 1):
        off = np.sqrt(np.sum(np.square(a - np.diag(np.diag(a)))))
        if off < tol:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                colp = a[:, p].copy()
                colq = a[:, q]
                a[:, p] = c * colp - s * colq
                a[:, q] = s * colp + c * colq
                rowp = a[p, :].copy()
                rowq = a[q, :]
                a[p, :] = c * rowp - s * rowq
                a[q, :] = s * rowp + c * rowq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v, max_sweeps + 1

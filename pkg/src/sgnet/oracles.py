"""Slow reference implementations used to check the fast paths.

Nothing here calls the kernels or the vectorised code it is compared with.
"""
from __future__ import annotations

import math

import numpy as np


def brute_force_nodes(map2d, patch: int, extremum: str = "maxima"):
    """Scan every patch cell by cell.

    Cells past the map edge read as 0 and are eligible for maxima but never
    for minima. Returns ``(nodes, attributes)`` in row-major patch order.
    """
    h, w = len(map2d), len(map2d[0])
    rows, cols = math.ceil(h / patch), math.ceil(w / patch)
    nodes, attrs = [], []

    def value(y, x):
        return float(map2d[y][x]) if (y < h and x < w) else 0.0

    for r in range(rows):
        for c in range(cols):
            best, where = None, None
            for i in range(patch):
                for j in range(patch):
                    y, x = r * patch + i, c * patch + j
                    if extremum == "minima" and (y >= h or x >= w):
                        continue
                    v = value(y, x)
                    better = best is None or (v > best if extremum == "maxima" else v < best)
                    if better:
                        best, where = v, (y, x)
            y, x = where
            nodes.append((r, c, y, x))
            attrs.append([value(y, c * patch + j) for j in range(patch)])
    return nodes, np.array(attrs)


def brute_force_maxpool(x, window: int, stride: int):
    b, h, w, c = x.shape
    oh, ow = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.empty((b, oh, ow, c), dtype=x.dtype)
    for n in range(b):
        for i in range(oh):
            for j in range(ow):
                for k in range(c):
                    out[n, i, j, k] = max(
                        x[n, i * stride + a, j * stride + d, k] for a in range(window) for d in range(window)
                    )
    return out


def brute_force_conv(x, filters, bias, stride=1, padding=0):
    """Direct six-loop cross-correlation."""
    b, h, w, c = x.shape
    o, kh, kw, _ = filters.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((b, oh, ow, o))
    for n in range(b):
        for y in range(oh):
            for xx in range(ow):
                for f in range(o):
                    acc = float(bias[f])
                    for i in range(kh):
                        for j in range(kw):
                            for k in range(c):
                                acc += filters[f, i, j, k] * xp[n, y * stride + i, xx * stride + j, k]
                    out[n, y, xx, f] = acc
    return out


def numeric_grad(f, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b, floor: float = 0.0) -> float:
    """``max|a - b| / max(max|a|, max|b|, floor)``, 0 when the scale vanishes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - b).max() / scale)
